fn main() {
    std::process::exit(rcm_rough::cli::main_with_args(std::env::args_os()));
}
