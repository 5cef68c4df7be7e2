fn main() {
    std::process::exit(aftmed::cli::run(std::env::args_os()));
}
