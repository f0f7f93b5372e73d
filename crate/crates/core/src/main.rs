fn main() {
    std::process::exit(adavar::cli::main());
}
