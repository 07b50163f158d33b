fn main() {
    std::process::exit(passage_kit::cli::main());
}
