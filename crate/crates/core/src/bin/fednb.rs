fn main() {
    std::process::exit(fednb::cli::run(std::env::args_os()));
}
