fn main() {
    std::process::exit(constraint_belief::cli::run());
}
