use clap::Parser;

fn main() {
    std::process::exit(varlab::cli::run(varlab::cli::Cli::parse()));
}
