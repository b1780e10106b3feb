use clap::Parser;
use scaffold_cli::{run, Cli};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(&cli, args) {
        Ok(m) => eprintln!("wrote {} artifacts for run {}", m.artifacts.len(), m.run_id),
        Err(e) => {
            eprintln!("scaffold {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
