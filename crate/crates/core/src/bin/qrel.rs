fn main() {
    std::process::exit(qrel::cli::main_with_args(std::env::args_os()));
}
