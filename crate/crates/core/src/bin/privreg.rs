fn main() {
    std::process::exit(privreg::cli::run(std::env::args_os()));
}
