fn main() {
    std::process::exit(noisecap::cli::run(std::env::args_os()));
}
