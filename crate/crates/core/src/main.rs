fn main() {
    std::process::exit(ddslit::cli::run(std::env::args_os()));
}
