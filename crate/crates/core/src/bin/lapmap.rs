fn main() {
    std::process::exit(lapmap::cli::run(std::env::args_os()));
}
