fn main() {
    std::process::exit(compbench::cli::main());
}
