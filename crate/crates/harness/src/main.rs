fn main() {
    std::process::exit(rowamp_harness::cli::cli(std::env::args_os()));
}
