use clap::Parser;
use hte_svm::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("hte-svm: {e}");
        std::process::exit(e.exit_code());
    }
}
