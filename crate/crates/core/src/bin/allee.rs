fn main() {
    std::process::exit(allee::cli::main_with_args(std::env::args_os()));
}
