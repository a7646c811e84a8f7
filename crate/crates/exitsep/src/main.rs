fn main() {
    std::process::exit(exitsep::cli::run(std::env::args_os()));
}
