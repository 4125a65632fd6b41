fn main() {
    std::process::exit(gridstrike_cli::run(std::env::args_os()));
}
