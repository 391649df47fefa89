fn main() {
    std::process::exit(twinforge_cli::main_with_args(std::env::args_os()));
}
