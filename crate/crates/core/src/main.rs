use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = smn::cli::main_with(std::env::args(), &mut out, &mut std::io::stderr());
    let _ = out.flush();
    std::process::exit(code);
}
