fn main() {
    std::process::exit(simxfer::cli::main_with(std::env::args_os()));
}
