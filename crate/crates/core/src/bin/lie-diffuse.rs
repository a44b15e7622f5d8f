fn main() {
    std::process::exit(lie_diffuse::cli::main());
}
