fn main() {
    std::process::exit(rsmlqr::run(std::env::args_os()));
}
