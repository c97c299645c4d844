fn main() {
    std::process::exit(floeformer_cli::run(std::env::args_os()));
}
