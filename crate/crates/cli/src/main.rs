use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(symflow_cli::run(std::env::args_os()))
}
