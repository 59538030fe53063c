fn main() {
    std::process::exit(hypi::cli::main());
}
