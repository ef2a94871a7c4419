fn main() {
    std::process::exit(fmf::cli::main_with(std::env::args_os()));
}
