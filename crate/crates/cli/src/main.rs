fn main() {
    std::process::exit(aqua_cli::run(std::env::args_os()));
}
