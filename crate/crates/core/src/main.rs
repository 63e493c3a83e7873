fn main() {
    std::process::exit(coord_sim::cli::dispatch(std::env::args_os()));
}
