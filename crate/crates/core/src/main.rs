fn main() {
    std::process::exit(typscen::cli::main_with_args(std::env::args_os()));
}
