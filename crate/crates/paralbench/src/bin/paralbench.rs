fn main() {
    std::process::exit(paralbench::cli::main());
}
