fn main() {
    std::process::exit(twpasim::cli::main());
}
