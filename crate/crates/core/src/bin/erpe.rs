fn main() {
    std::process::exit(erpenet::cli::run(std::env::args_os()));
}
