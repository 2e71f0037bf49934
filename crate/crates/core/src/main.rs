fn main() {
    std::process::exit(qss::cli::main_with_args(std::env::args_os()));
}
