use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lrvb_cli::main_impl())
}
