fn main() {
    std::process::exit(voxfield::cli::run(std::env::args_os()));
}
