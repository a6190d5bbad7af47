//! Writes a small labeled corpus as JSONL to stdout.
//!
//! ```text
//! cargo run -p rvhate --example toy_corpus -- 200 > toy.jsonl
//! ```

use std::process::ExitCode;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let n = match args.next().map(|s| s.parse::<usize>()) {
        None => 200,
        Some(Ok(n)) if n >= 10 => n,
        _ => {
            eprintln!("usage: toy_corpus [ROWS >= 10] [SEED]");
            return ExitCode::from(2);
        }
    };
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let corpus = rvhate::synthetic::toy_corpus(n, seed);
    match corpus.write_jsonl(std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("toy_corpus: {e}");
            ExitCode::FAILURE
        }
    }
}
