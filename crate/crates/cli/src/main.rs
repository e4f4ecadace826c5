fn main() {
    std::process::exit(cg_invert::main_with_args(std::env::args_os()));
}
