fn main() {
    std::process::exit(rrdps::cli::main_with_args(std::env::args_os()));
}
