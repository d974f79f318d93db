use clap::Parser;

fn main() {
    let cli = ftseg_cli::Cli::parse();
    std::process::exit(ftseg_cli::run(cli));
}
