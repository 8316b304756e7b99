//! Event ingestion, popularity normalization and deterministic splits.
//!
//! Events live in a JSONL file whose first line is a header:
//!
//! ```text
//! {"format":"smn-events/1","fc":512,"count":2}
//! {"id":"e1","tokens":["kfc","blind","box"],"popularity":4521.0,"image_feature":[0.1, ...]}
//! {"id":"e2","tokens":["storm"],"popularity":120.5,"image_feature":null}
//! ```
//!
//! Tokens arrive pre-segmented. The `popularity` field in the file is the raw
//! platform score; the normalized value is only ever produced in memory.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semb::EmbeddingFile;

pub const EVENTS_FORMAT: &str = "smn-events/1";

/// One webpage: its words, an optional image embedding and its popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: String,
    pub tokens: Vec<String>,
    pub image_feature: Option<Vec<f32>>,
    pub popularity_raw: f64,
    /// Normalized score in `[0, 1]`; equals `popularity_raw` until a
    /// [`PopularityScale`] has been applied.
    pub popularity: f64,
}

impl Event {
    /// Distinct tokens in first-occurrence order.
    pub fn unique_tokens(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.tokens
            .iter()
            .map(String::as_str)
            .filter(|t| seen.insert(*t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub fc: Option<usize>,
    pub count: usize,
}

impl DatasetHeader {
    pub fn new(fc: Option<usize>, count: usize) -> Self {
        Self {
            format: EVENTS_FORMAT.to_string(),
            fc,
            count,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    id: String,
    tokens: Vec<String>,
    popularity: f64,
    #[serde(default)]
    image_feature: Option<Vec<f32>>,
}

/// Reads an events file. Line numbers in errors are 1-based and count the
/// header as line 1.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<Event>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file, expected header".into(),
            })
        }
    };
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != EVENTS_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported format {:?}", header.format),
        });
    }

    let mut events = Vec::with_capacity(header.count);
    let mut ids = HashSet::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("event {:?} has no tokens", record.id),
            });
        }
        if !(record.popularity.is_finite() && record.popularity >= 0.0) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("popularity must be a nonnegative number, got {}", record.popularity),
            });
        }
        if let Some(feature) = &record.image_feature {
            let expected = header.fc.ok_or_else(|| Error::Parse {
                line: line_no,
                message: "image_feature present but header fc is null".into(),
            })?;
            if feature.len() != expected {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: feature.len(),
                });
            }
        }
        if !ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        events.push(Event {
            id: record.id,
            tokens: record.tokens,
            image_feature: record.image_feature,
            popularity_raw: record.popularity,
            popularity: record.popularity,
        });
    }

    if events.len() != header.count {
        return Err(Error::Parse {
            line: 1,
            message: format!("header count {} disagrees with {} records", header.count, events.len()),
        });
    }
    Ok((header, events))
}

/// Writes events in the format read by [`load_corpus`]. The raw popularity is
/// what gets persisted.
pub fn write_corpus(path: impl AsRef<Path>, fc: Option<usize>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = DatasetHeader::new(fc, events.len());
    let mut write = |s: String| writeln!(out, "{s}").map_err(|e| Error::io(path, e));
    write(serde_json::to_string(&header).expect("header serializes"))?;
    for event in events {
        let record = EventRecord {
            id: event.id.clone(),
            tokens: event.tokens.clone(),
            popularity: event.popularity_raw,
            image_feature: event.image_feature.clone(),
        };
        write(serde_json::to_string(&record).expect("record serializes"))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Replaces in-line image features with rows from a companion embedding file
/// keyed by event id. Events absent from the file end up without a feature.
pub fn attach_image_features(events: &mut [Event], images: &EmbeddingFile) {
    for event in events {
        event.image_feature = images.get(&event.id).map(<[f32]>::to_vec);
    }
}

/// Min-max map from raw popularity to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopularityScale {
    pub min: f64,
    pub max: f64,
}

impl PopularityScale {
    pub fn fit<'a>(raws: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &r in raws {
            min = min.min(r);
            max = max.max(r);
        }
        if !min.is_finite() {
            return Err(Error::Config("cannot normalize an empty set of events".into()));
        }
        if max <= min {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self { min, max })
    }

    /// Clamped to `[0, 1]`: scores outside the fitted range saturate.
    pub fn apply(&self, raw: f64) -> f64 {
        ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn invert(&self, normalized: f64) -> f64 {
        self.min + normalized * (self.max - self.min)
    }

    pub fn apply_to(&self, events: &mut [Event]) {
        for e in events {
            e.popularity = self.apply(e.popularity_raw);
        }
    }
}

/// Fits a scale on `events` and returns normalized copies.
pub fn normalize_popularity(events: &[Event]) -> Result<(Vec<Event>, PopularityScale)> {
    let scale = PopularityScale::fit(events.iter().map(|e| &e.popularity_raw))?;
    let mut out = events.to_vec();
    scale.apply_to(&mut out);
    Ok((out, scale))
}

/// Train/validation/test partition of event ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// `floor(ratio * n)`, tolerant of representation error such as `0.1 * 30`.
pub(crate) fn floor_fraction(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// `ceil(ratio * n)`, tolerant of representation error such as `0.3 * 10`.
pub(crate) fn ceil_fraction(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Seeded shuffle, then floor allocation for validation and test with the
/// remainder going to train. Each id list keeps corpus order.
pub fn split(events: &[Event], ratios: SplitRatios, seed: u64) -> Result<Split> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val >= 0.0 && test >= 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let n = events.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_val = floor_fraction(val, n);
    let n_test = floor_fraction(test, n);
    let n_train = n - n_val - n_test;

    let mut label = vec![0u8; n];
    for &i in &order[n_train..n_train + n_val] {
        label[i] = 1;
    }
    for &i in &order[n_train + n_val..] {
        label[i] = 2;
    }
    let mut out = Split {
        train_ids: Vec::with_capacity(n_train),
        val_ids: Vec::with_capacity(n_val),
        test_ids: Vec::with_capacity(n_test),
        seed,
    };
    for (event, l) in events.iter().zip(label) {
        let bucket = match l {
            0 => &mut out.train_ids,
            1 => &mut out.val_ids,
            _ => &mut out.test_ids,
        };
        bucket.push(event.id.clone());
    }
    Ok(out)
}

impl Split {
    /// Events of one part, in corpus order.
    pub fn select<'a>(&self, part: SplitPart, events: &'a [Event]) -> Vec<&'a Event> {
        let ids: HashSet<&str> = self.ids(part).iter().map(String::as_str).collect();
        events.iter().filter(|e| ids.contains(e.id.as_str())).collect()
    }

    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train_ids,
            SplitPart::Val => &self.val_ids,
            SplitPart::Test => &self.test_ids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, raw: f64) -> Event {
        Event {
            id: id.into(),
            tokens: vec!["a".into()],
            image_feature: None,
            popularity_raw: raw,
            popularity: raw,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_three_lines_in_order() {
        let f = write_lines(&[
            r#"{"format":"smn-events/1","fc":2,"count":3}"#,
            r#"{"id":"x","tokens":["a","b"],"popularity":1.5,"image_feature":[0.5,1.0]}"#,
            r#"{"id":"y","tokens":["b"],"popularity":3,"image_feature":null}"#,
            r#"{"id":"z","tokens":["c","c"],"popularity":0}"#,
        ]);
        let (header, events) = load_corpus(f.path()).unwrap();
        assert_eq!(header.fc, Some(2));
        let ids: Vec<_> = events.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["x", "y", "z"]);
        assert_eq!(events[0].image_feature.as_deref(), Some(&[0.5f32, 1.0][..]));
        assert_eq!(events[2].unique_tokens(), ["c"]);
    }

    #[test]
    fn wrong_feature_length_names_line() {
        let f = write_lines(&[
            r#"{"format":"smn-events/1","fc":3,"count":2}"#,
            r#"{"id":"x","tokens":["a"],"popularity":1,"image_feature":[1,2,3]}"#,
            r#"{"id":"y","tokens":["a"],"popularity":1,"image_feature":[1,2]}"#,
        ]);
        match load_corpus(f.path()) {
            Err(Error::DimensionMismatch { line, expected, found }) => {
                assert_eq!((line, expected, found), (3, 3, 2));
            }
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_and_duplicates_are_rejected() {
        let f = write_lines(&[
            r#"{"format":"smn-events/1","fc":null,"count":2}"#,
            r#"{"id":"x","tokens":["a"],"popularity":1}"#,
            r#"{"id":"y","tokens":["a"],"popularity":"#,
        ]);
        assert!(matches!(load_corpus(f.path()), Err(Error::Parse { line: 3, .. })));

        let f = write_lines(&[
            r#"{"format":"smn-events/1","fc":null,"count":2}"#,
            r#"{"id":"x","tokens":["a"],"popularity":1}"#,
            r#"{"id":"x","tokens":["b"],"popularity":2}"#,
        ]);
        assert!(matches!(load_corpus(f.path()), Err(Error::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn empty_tokens_rejected() {
        let f = write_lines(&[
            r#"{"format":"smn-events/1","fc":null,"count":1}"#,
            r#"{"id":"x","tokens":[],"popularity":1}"#,
        ]);
        assert!(matches!(load_corpus(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn normalization_examples() {
        let events: Vec<_> = [10.0, 20.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| ev(&i.to_string(), r))
            .collect();
        let (out, scale) = normalize_popularity(&events).unwrap();
        let ys: Vec<_> = out.iter().map(|e| e.popularity).collect();
        assert_eq!(ys, [0.0, 0.5, 1.0]);
        assert_eq!((scale.min, scale.max), (10.0, 30.0));

        let (out, _) = normalize_popularity(&[ev("a", 0.0), ev("b", 100.0)]).unwrap();
        assert_eq!(out[0].popularity, 0.0);
        assert_eq!(out[1].popularity, 1.0);

        let flat = vec![ev("a", 5.0), ev("b", 5.0), ev("c", 5.0)];
        assert!(matches!(normalize_popularity(&flat), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn normalization_is_idempotent_on_unit_range() {
        let scale = PopularityScale { min: 0.0, max: 1.0 };
        for y in [0.0, 0.125, 0.3, 0.999, 1.0] {
            assert_eq!(scale.apply(y), y);
            assert_eq!(scale.invert(scale.apply(y)), y);
        }
    }

    #[test]
    fn split_sizes_follow_floor_allocation() {
        let events: Vec<_> = (0..10).map(|i| ev(&format!("e{i}"), i as f64)).collect();
        let s = split(&events, SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (8, 1, 1));
        assert_eq!(s, split(&events, SplitRatios::default(), 7).unwrap());

        let four: Vec<_> = events[..4].to_vec();
        let ratios = SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        let s = split(&four, ratios, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (2, 1, 1));

        let mut all: Vec<_> = s
            .train_ids
            .iter()
            .chain(&s.val_ids)
            .chain(&s.test_ids)
            .cloned()
            .collect();
        all.sort();
        assert_eq!(all, ["e0", "e1", "e2", "e3"]);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let events = vec![ev("a", 1.0)];
        let bad = SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.2,
        };
        assert!(matches!(split(&events, bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn fraction_helpers_absorb_rounding() {
        assert_eq!(ceil_fraction(0.1 * 3.0, 10), 3);
        assert_eq!(ceil_fraction(0.5, 9), 5);
        assert_eq!(floor_fraction(0.1, 30), 3);
        assert_eq!(floor_fraction(0.7, 10), 7);
    }
}
