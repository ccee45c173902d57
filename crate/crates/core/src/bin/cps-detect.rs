fn main() {
    std::process::exit(cps_detect::harness::cli::cli_main(std::env::args_os()));
}
