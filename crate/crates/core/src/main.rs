fn main() {
    std::process::exit(scrubkit::cli::main_with_args(std::env::args_os()));
}
