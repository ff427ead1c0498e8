fn main() {
    std::process::exit(svolight::cli::main_with_args(std::env::args_os()));
}
