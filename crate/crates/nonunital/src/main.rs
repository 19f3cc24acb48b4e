fn main() {
    std::process::exit(nonunital::cli::main_with_args(std::env::args_os()));
}
