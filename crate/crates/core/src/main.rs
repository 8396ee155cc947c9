fn main() {
    std::process::exit(taea::cli::main());
}
