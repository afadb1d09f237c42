fn main() {
    std::process::exit(attnshap::cli::main());
}
