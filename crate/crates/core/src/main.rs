fn main() {
    std::process::exit(fclr::cli::run(std::env::args_os()));
}
