use std::process::ExitCode;

fn main() -> ExitCode {
    mempath::cli::main_from(std::env::args_os())
}
