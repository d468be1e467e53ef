fn main() {
    std::process::exit(swgs::cli::main_with_args(std::env::args_os()));
}
