fn main() {
    std::process::exit(msnas_cli::run(std::env::args_os()));
}
