fn main() {
    std::process::exit(wildcensus_cli::run(std::env::args_os()));
}
