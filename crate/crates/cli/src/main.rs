fn main() {
    std::process::exit(goalctl_cli::run(std::env::args_os()));
}
