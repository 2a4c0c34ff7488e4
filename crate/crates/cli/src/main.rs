fn main() {
    std::process::exit(mrsvs_cli::run(std::env::args_os()));
}
