fn main() {
    std::process::exit(ltx_cli::main_with_args(std::env::args_os()));
}
