fn main() {
    std::process::exit(crawlrate::cli::run(std::env::args_os()));
}
