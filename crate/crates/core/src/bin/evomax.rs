fn main() {
    std::process::exit(evomax::cli::main_with_args(std::env::args_os()));
}
