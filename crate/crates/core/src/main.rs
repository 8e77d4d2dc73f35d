fn main() {
    std::process::exit(copula_proc::cli::run(std::env::args_os()));
}
