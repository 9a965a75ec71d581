fn main() {
    std::process::exit(overparam::cli::run(std::env::args_os()));
}
