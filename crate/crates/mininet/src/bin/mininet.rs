fn main() {
    std::process::exit(mininet::cli::main_with(std::env::args_os()));
}
