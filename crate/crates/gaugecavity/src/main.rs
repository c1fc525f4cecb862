fn main() {
    std::process::exit(gaugecavity::cli::run());
}
