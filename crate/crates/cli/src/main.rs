use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ycda_cli::commands::main_with(std::env::args_os()))
}
