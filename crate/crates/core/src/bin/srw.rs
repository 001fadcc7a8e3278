fn main() {
    std::process::exit(srw::cli::main_with(std::env::args_os()));
}
