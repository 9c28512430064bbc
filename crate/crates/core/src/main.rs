fn main() {
    std::process::exit(cvarbound::cli::run(std::env::args_os()));
}
