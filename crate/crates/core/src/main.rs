fn main() {
    std::process::exit(fedswarm::cli::main(
        &std::env::args().skip(1).collect::<Vec<_>>(),
    ))
}
