fn main() {
    std::process::exit(gkg_cli::main_with(std::env::args_os()));
}
