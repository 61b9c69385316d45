fn main() {
    std::process::exit(sheclt::cli::run(std::env::args_os()));
}
