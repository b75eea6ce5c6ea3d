fn main() {
    std::process::exit(wsloc::cli::run());
}
