fn main() {
    std::process::exit(treeval::cli::run(std::env::args_os()));
}
