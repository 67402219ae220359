fn main() {
    std::process::exit(adassm::cli::run(std::env::args_os()));
}
