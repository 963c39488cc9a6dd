fn main() {
    std::process::exit(ellwishart_cli::run(std::env::args_os()));
}
