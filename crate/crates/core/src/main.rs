fn main() {
    std::process::exit(radsim::cli::run(std::env::args_os()));
}
