fn main() {
    std::process::exit(elf::cli::main_with_args(std::env::args_os()));
}
