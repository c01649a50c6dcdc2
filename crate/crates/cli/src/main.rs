use clap::Parser;
use mcnet_cli::{exit, run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let code = match run(&cli, &mut stdout) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("mcnet: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
