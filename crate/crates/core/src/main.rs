fn main() {
    std::process::exit(swmr_forge::cli::main());
}
