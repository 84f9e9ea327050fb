fn main() {
    std::process::exit(mvf_cli::run(std::env::args_os()));
}
