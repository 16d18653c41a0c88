fn main() {
    std::process::exit(hetsheaf::cli::main_with_args(std::env::args_os()));
}
