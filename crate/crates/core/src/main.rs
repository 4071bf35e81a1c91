use std::process::ExitCode;

fn main() -> ExitCode {
    ldwatch::cli::run(std::env::args_os())
}
