fn main() {
    std::process::exit(micgraph::cli::run(std::env::args_os()));
}
