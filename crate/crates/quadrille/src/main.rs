fn main() {
    std::process::exit(quadrille::cli::run(std::env::args_os()));
}
