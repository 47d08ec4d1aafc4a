fn main() {
    std::process::exit(cloak::cli::main_with_args(std::env::args_os()));
}
