use clap::Parser;

fn main() {
    let cli = ecomem_cli::Cli::parse();
    match ecomem_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(ecomem_cli::EXIT_USAGE);
        }
    }
}
