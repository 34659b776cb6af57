fn main() {
    std::process::exit(slda::cli::run());
}
