fn main() {
    std::process::exit(optseq::cli::run(std::env::args_os()));
}
