fn main() {
    std::process::exit(phaseq::cli::main_entry());
}
