fn main() {
    std::process::exit(mshap::cli::main_with_args(std::env::args_os()));
}
