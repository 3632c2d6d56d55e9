fn main() {
    std::process::exit(exprspot_core::cli::main_with_args(std::env::args_os()));
}
