fn main() {
    std::process::exit(nodalsep::cli::run(std::env::args_os()));
}
