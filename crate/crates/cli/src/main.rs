fn main() {
    std::process::exit(kernel_diff_cli::run(std::env::args_os()));
}
