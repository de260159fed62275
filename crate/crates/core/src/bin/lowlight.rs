use std::process::ExitCode;

fn main() -> ExitCode {
    lowlight::cli::main_from_args(std::env::args_os())
}
