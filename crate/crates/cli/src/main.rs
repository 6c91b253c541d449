fn main() {
    std::process::exit(medmeta_cli::run(std::env::args_os()));
}
