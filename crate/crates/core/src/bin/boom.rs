fn main() {
    std::process::exit(boom_core::cli::main_with_args(std::env::args_os()));
}
