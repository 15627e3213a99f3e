fn main() {
    std::process::exit(uwf::cli::main_with_args(std::env::args_os()));
}
