//! Plain-text embedding files (`.semb`).
//!
//! ```text
//! semb/1 dim=4
//! storm<TAB>0.1 -0.25 1 0.5
//! ```
//!
//! Values are written with the shortest decimal form that round-trips `f32`.
//! Word embeddings are keyed by token, image embeddings by event id.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "semb/1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    keys: Vec<String>,
    rows: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
    /// Recoverable oddities found while parsing (blank lines, repeated keys).
    pub warnings: Vec<String>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.rows[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.keys
            .iter()
            .map(String::as_str)
            .zip(self.rows.iter().map(Vec::as_slice))
    }

    /// Appends a row; a repeated key replaces nothing and is reported as an error.
    pub fn insert(&mut self, key: impl Into<String>, row: Vec<f32>) -> Result<()> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(Error::Format(format!(
                "row {key:?} has {} values, expected dim={}",
                row.len(),
                self.dim
            )));
        }
        if key.contains(['\t', '\n']) {
            return Err(Error::Format(format!("key {key:?} contains a tab or newline")));
        }
        if self.index.contains_key(&key) {
            return Err(Error::Format(format!("duplicate key {key:?}")));
        }
        self.index.insert(key.clone(), self.rows.len());
        self.keys.push(key);
        self.rows.push(row);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty embedding file".into(),
        })?;
        let dim = parse_header(header)?;
        let mut out = Self::new(dim);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                out.warnings.push(format!("line {line_no}: blank line skipped"));
                continue;
            }
            let (key, values) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected `key<TAB>values`".into(),
            })?;
            let row = values
                .split_ascii_whitespace()
                .map(|v| {
                    v.parse::<f32>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad value {v:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f32>>>()?;
            if row.len() != dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("{} values, header declares dim={dim}", row.len()),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-finite value".into(),
                });
            }
            if out.index.contains_key(key) {
                out.warnings
                    .push(format!("line {line_no}: repeated key {key:?} ignored"));
                continue;
            }
            out.insert(key, row)?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = Self::parse(&text)?;
        for w in &file.warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(file)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} dim={}\n", self.dim);
        for (key, row) in self.iter() {
            s.push_str(key);
            s.push('\t');
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                // f32 Display is the shortest representation that parses back exactly.
                write!(s, "{v}").expect("writing to a String cannot fail");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Result<usize> {
    let bad = || Error::Parse {
        line: 1,
        message: format!("expected `{MAGIC} dim=<F>`, got {line:?}"),
    };
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad());
    }
    let dim = parts
        .next()
        .and_then(|p| p.strip_prefix("dim="))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(bad)?;
    if dim == 0 || parts.next().is_some() {
        return Err(bad());
    }
    Ok(dim)
}
