fn main() {
    std::process::exit(bmc_lab::cli::run(std::env::args_os()));
}
