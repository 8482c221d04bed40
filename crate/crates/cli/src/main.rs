use clap::Parser;

fn main() {
    let cli = koopreg_cli::Cli::parse();
    std::process::exit(koopreg_cli::run(cli));
}
