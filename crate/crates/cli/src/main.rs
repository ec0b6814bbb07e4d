fn main() {
    std::process::exit(deepfactor_cli::main_with_args(std::env::args_os()));
}
