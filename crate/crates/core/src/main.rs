fn main() {
    std::process::exit(trajflow::cli::run(std::env::args_os()));
}
