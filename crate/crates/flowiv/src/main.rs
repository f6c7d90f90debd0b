fn main() {
    std::process::exit(flowiv::cli::run());
}
