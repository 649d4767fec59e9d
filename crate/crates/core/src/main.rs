fn main() {
    std::process::exit(multifun_dag::cli::run(std::env::args_os()));
}
