use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    // A panic is a bug: report it as an internal error.
    let code = panic::catch_unwind(|| bertsum_cli::run(std::env::args_os())).unwrap_or(2);
    ExitCode::from(code as u8)
}
