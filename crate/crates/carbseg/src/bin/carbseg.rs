fn main() {
    std::process::exit(carbseg::cli::run(std::env::args_os()));
}
