fn main() {
    std::process::exit(dynslam::cli::main_with_args(std::env::args_os()));
}
