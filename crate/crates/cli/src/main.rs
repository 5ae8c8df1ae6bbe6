fn main() {
    std::process::exit(cw_cli::main_with_args(std::env::args_os()));
}
