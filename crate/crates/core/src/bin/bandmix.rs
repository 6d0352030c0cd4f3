fn main() {
    std::process::exit(bandmix::cli::main());
}
