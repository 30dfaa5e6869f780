fn main() {
    std::process::exit(ebdp::cli::main_with_args(std::env::args_os()));
}
