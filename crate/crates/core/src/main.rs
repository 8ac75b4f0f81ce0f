fn main() {
    std::process::exit(smoothing_core::cli::run(std::env::args_os()));
}
