fn main() {
    std::process::exit(geodqn::cli::cli_main(std::env::args()));
}
