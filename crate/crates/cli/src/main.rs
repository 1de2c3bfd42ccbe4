fn main() {
    std::process::exit(curator_cli::run(std::env::args_os()));
}
