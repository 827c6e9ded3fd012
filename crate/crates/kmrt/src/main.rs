use std::process::ExitCode;

fn main() -> ExitCode {
    kmrt::cli::main_with(std::env::args_os())
}
