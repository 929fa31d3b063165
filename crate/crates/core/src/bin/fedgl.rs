fn main() {
    std::process::exit(fedgl::cli::run(std::env::args_os()));
}
