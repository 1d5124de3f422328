fn main() {
    std::process::exit(relconv_cli::main_with(std::env::args_os()));
}
