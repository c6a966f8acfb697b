fn main() {
    std::process::exit(masklab::cli::run(std::env::args_os()));
}
