fn main() {
    std::process::exit(sa_momentum::cli::main_with_args(std::env::args_os()));
}
