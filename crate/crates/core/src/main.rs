fn main() {
    std::process::exit(nonstat_geo::cli::run(std::env::args_os()));
}
