fn main() {
    std::process::exit(previewflow_cli::run_from(std::env::args_os()));
}
