fn main() {
    std::process::exit(toric_lab::cli::run_from(std::env::args_os()));
}
