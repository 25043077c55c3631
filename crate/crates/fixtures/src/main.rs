//! Writes the planted-bias fixture: `make-fixture <out-dir> [seed]`.

use std::path::PathBuf;
use std::process::ExitCode;

use vlaudit_fixtures::{generate, FixtureSpec, DEFAULT_SEED};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (dir, seed) = match args.as_slice() {
        [dir] => (PathBuf::from(dir), DEFAULT_SEED),
        [dir, seed] => match seed.parse() {
            Ok(s) => (PathBuf::from(dir), s),
            Err(_) => {
                eprintln!("seed must be an unsigned integer, got {seed:?}");
                return ExitCode::from(64);
            }
        },
        _ => {
            eprintln!("usage: make-fixture <out-dir> [seed]");
            return ExitCode::from(64);
        }
    };
    let spec = FixtureSpec {
        seed,
        ..FixtureSpec::default()
    };
    match generate(&spec).and_then(|f| f.write(&dir)) {
        Ok(paths) => {
            println!(
                "wrote fixture to {} (ground truth in {})",
                dir.display(),
                paths.truth.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
