fn main() {
    std::process::exit(safseg::cli::main_with_args(std::env::args_os()));
}
