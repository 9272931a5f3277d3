fn main() {
    std::process::exit(lqgame::cli::run_cli(std::env::args()));
}
