fn main() {
    std::process::exit(diffhg::cli::run_from(std::env::args_os()));
}
