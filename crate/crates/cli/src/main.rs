use clap::Parser;

use egavatar_cli::{run, Cli, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error");
            eprintln!("{}", if first.starts_with("error: ") { first.to_string() } else { format!("error: {first}") });
            std::process::exit(EXIT_USAGE);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.message.replace('\n', " "));
        std::process::exit(e.code);
    }
}
