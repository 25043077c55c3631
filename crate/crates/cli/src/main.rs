use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vlaudit_cli::run(std::env::args_os()))
}
