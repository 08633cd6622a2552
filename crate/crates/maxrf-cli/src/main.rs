fn main() {
    std::process::exit(maxrf_cli::main_from(std::env::args_os()));
}
