fn main() {
    std::process::exit(catex::cli::run(std::env::args_os()));
}
