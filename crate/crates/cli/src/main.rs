fn main() {
    std::process::exit(mexdet_cli::run(std::env::args_os()));
}
