fn main() {
    std::process::exit(ddcn::cli::run(std::env::args_os()));
}
