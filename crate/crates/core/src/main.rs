fn main() {
    std::process::exit(warpdrift::cli::run(std::env::args_os()));
}
