fn main() {
    std::process::exit(sepentail::cli::run(std::env::args().collect()));
}
