fn main() {
    std::process::exit(taskemb_cli::main_with_args(std::env::args_os()));
}
