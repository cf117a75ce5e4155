fn main() {
    std::process::exit(porkcast_cli::run(std::env::args_os()));
}
