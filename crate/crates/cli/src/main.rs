fn main() {
    std::process::exit(fbmhd_cli::run(std::env::args_os()));
}
