fn main() {
    std::process::exit(pbj::cli::main_with_args(std::env::args_os()));
}
