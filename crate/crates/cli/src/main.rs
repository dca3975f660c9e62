fn main() {
    std::process::exit(pathnet_cli::run(std::env::args_os()));
}
