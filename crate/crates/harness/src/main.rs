fn main() {
    std::process::exit(smp_harness::cli::main_with_args(std::env::args_os()));
}
