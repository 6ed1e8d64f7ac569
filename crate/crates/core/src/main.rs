fn main() {
    std::process::exit(xmm::cli::dispatch(std::env::args_os()));
}
