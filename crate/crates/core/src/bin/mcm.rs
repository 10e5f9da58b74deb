use std::io::{self, BufReader};
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let mut streams = mcm::cli::Io {
        input: &mut input,
        out: &mut out,
        err: &mut err,
    };
    let code = mcm::cli::run(std::env::args_os(), &mut streams);
    ExitCode::from(code as u8)
}
