fn main() {
    std::process::exit(tsception::cli::run(std::env::args_os()));
}
