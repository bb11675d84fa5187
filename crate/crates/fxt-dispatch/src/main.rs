fn main() {
    std::process::exit(fxt_dispatch::cli::run(std::env::args_os()));
}
