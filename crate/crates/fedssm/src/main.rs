use clap::Parser;

fn main() {
    let cli = fedssm::cli::Cli::parse();
    let code = match fedssm::cli::execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}
