fn main() {
    std::process::exit(cnsdiff::cli::run_command(std::env::args_os()));
}
