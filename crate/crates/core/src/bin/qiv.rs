fn main() {
    std::process::exit(qiv_core::cli::main());
}
