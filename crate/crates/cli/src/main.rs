use std::io;

use clap::Parser;
use plausicf_cli::app::{init_logging, run_from, Cli};

fn main() {
    let args: Vec<_> = std::env::args_os().collect();
    if let Ok(cli) = Cli::try_parse_from(&args) {
        init_logging(cli.verbose);
    }
    let code = run_from(args, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
