fn main() {
    std::process::exit(clsprobe::cli_io::run(std::env::args_os()));
}
