fn main() {
    std::process::exit(dualfilter::cli::run(std::env::args_os()));
}
