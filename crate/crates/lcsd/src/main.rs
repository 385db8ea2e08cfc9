fn main() {
    std::process::exit(lcsd::cli::run());
}
