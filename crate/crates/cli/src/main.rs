fn main() {
    std::process::exit(affordance_cli::run(std::env::args_os()));
}
