fn main() {
    std::process::exit(datobs_cli::main_with_args(std::env::args_os()));
}
