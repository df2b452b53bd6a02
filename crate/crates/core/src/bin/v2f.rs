fn main() {
    std::process::exit(v2f_core::cli::main_from(std::env::args_os()));
}
