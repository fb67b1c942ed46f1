fn main() {
    let code = shrinklearn::cli::main_with_args(std::env::args().collect());
    std::process::exit(code);
}
