fn main() {
    std::process::exit(storyline::cli::main());
}
