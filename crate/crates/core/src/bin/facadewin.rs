fn main() {
    std::process::exit(facadewin::cli::main());
}
