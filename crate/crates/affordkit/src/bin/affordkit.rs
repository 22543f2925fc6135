use clap::Parser;

fn main() {
    let cli = affordkit::cli::Cli::parse();
    std::process::exit(affordkit::cli::run(cli));
}
