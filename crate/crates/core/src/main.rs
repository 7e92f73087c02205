use std::process::ExitCode;

fn main() -> ExitCode {
    alpha_patch::cli::main_with_args(std::env::args_os())
}
