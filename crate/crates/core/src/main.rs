fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(clickmodel::cli::run(&argv));
}
