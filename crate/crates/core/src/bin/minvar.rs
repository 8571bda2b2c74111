fn main() {
    std::process::exit(minvar::cli::main_with_args(std::env::args_os()));
}
