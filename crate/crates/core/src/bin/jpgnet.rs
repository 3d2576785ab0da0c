fn main() {
    std::process::exit(jpgnet_core::cli::run(std::env::args_os()));
}
