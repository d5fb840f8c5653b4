use clap::Parser;

fn main() {
    let cli = followahead_cli::Cli::parse();
    std::process::exit(followahead_cli::run(cli));
}
