fn main() {
    std::process::exit(lyapgrid::cli::run(std::env::args_os()));
}
