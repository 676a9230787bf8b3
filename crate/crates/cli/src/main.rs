fn main() {
    std::process::exit(lrk_cli::run(std::env::args_os()));
}
