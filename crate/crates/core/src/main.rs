fn main() {
    std::process::exit(dcpt::cli::run(std::env::args_os()));
}
