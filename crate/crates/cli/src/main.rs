fn main() {
    std::process::exit(transitnet_cli::run(std::env::args_os()));
}
