fn main() {
    std::process::exit(rigid::cli::main());
}
