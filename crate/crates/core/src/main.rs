fn main() {
    std::process::exit(ebisg::cli::run(std::env::args_os()));
}
