fn main() {
    std::process::exit(qbattery_cli::run_cli(std::env::args_os()));
}
