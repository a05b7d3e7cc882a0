fn main() {
    std::process::exit(tdnode::cli::run(std::env::args_os()));
}
