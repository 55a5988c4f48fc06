fn main() {
    std::process::exit(bbridge::cli::main_with_args(std::env::args_os()));
}
