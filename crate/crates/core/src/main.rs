fn main() {
    std::process::exit(voxglyco::cli::run(std::env::args_os()));
}
