fn main() {
    std::process::exit(bvcontrol::cli::main_with_args(std::env::args_os()));
}
