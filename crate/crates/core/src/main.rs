fn main() {
    std::process::exit(spiral_agcnn::cli::main_with_args(std::env::args_os()));
}
