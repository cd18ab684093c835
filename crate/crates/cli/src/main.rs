fn main() {
    std::process::exit(cowcka_cli::run(std::env::args_os()));
}
