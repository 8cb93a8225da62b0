fn main() {
    std::process::exit(reachctl::cli::main_exit_code());
}
