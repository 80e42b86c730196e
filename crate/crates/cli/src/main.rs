fn main() {
    std::process::exit(vgnn_cli::dispatch(std::env::args_os()));
}
