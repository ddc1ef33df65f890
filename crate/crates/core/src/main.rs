fn main() {
    std::process::exit(mfsocial::cli::run(std::env::args_os()));
}
