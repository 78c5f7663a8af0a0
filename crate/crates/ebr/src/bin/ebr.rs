use std::process::ExitCode;

fn main() -> ExitCode {
    ebr::cli::run()
}
