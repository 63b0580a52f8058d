fn main() {
    std::process::exit(gga_core::cli::run(std::env::args_os()));
}
