fn main() {
    std::process::exit(ldkrr::cli::cli_main(std::env::args_os()));
}
