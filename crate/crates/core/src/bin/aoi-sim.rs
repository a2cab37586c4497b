fn main() {
    std::process::exit(aoi_fidelity::harness::cli(std::env::args_os()));
}
