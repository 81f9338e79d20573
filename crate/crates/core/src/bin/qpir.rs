fn main() {
    std::process::exit(qpir::cli_harness::main_with_args(std::env::args_os()));
}
