fn main() {
    std::process::exit(voltreg::cli::run(std::env::args_os()));
}
