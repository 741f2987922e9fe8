fn main() {
    std::process::exit(onenn_cli::run(std::env::args_os()));
}
