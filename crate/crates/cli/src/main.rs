fn main() {
    std::process::exit(psr_kit::run(std::env::args_os()));
}
