fn main() {
    std::process::exit(csclab_cli::run_cli(std::env::args_os()));
}
