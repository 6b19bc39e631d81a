fn main() {
    std::process::exit(topica_cli::run(std::env::args_os()));
}
