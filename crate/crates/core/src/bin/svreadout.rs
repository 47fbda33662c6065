fn main() {
    std::process::exit(svreadout::cli::run(std::env::args_os()));
}
