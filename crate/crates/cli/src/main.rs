fn main() {
    std::process::exit(vinpaint_cli::main_with(std::env::args_os()));
}
