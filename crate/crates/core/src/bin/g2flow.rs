use clap::Parser;

fn main() {
    let cli = g2flow::cli::Cli::parse();
    std::process::exit(g2flow::cli::run(&cli));
}
