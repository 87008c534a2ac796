fn main() {
    std::process::exit(snn_hwnas::cli::run(std::env::args_os()));
}
