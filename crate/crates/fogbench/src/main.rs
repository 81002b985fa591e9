//! Binary entry point; all behavior lives in [`fogbench::cli`].

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fogbench::cli::run())
}
