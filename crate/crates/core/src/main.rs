fn main() {
    std::process::exit(shapfed::cli::main_with_args(std::env::args_os()));
}
