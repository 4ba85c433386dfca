use clap::Parser;
use hybrid_cli::{run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        match &e {
            CliError::Usage(_) => {
                eprintln!("error: {e}\n");
                eprintln!("{}", <Cli as clap::CommandFactory>::command().render_usage());
            }
            _ => eprintln!("error: {e}"),
        }
        std::process::exit(e.exit_code());
    }
}
