fn main() {
    std::process::exit(socialkd::cli::main());
}
