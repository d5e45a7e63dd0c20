use clap::Parser;

fn main() {
    scns::cli::init_workers();
    let code = scns::cli::run(scns::cli::Cli::parse());
    std::process::exit(code);
}
