fn main() {
    std::process::exit(vidloc::cli::main_with(std::env::args_os()));
}
