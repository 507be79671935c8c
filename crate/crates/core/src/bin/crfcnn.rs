fn main() {
    std::process::exit(crfcnn::cli::run(std::env::args().skip(1).collect()));
}
