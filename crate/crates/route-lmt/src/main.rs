fn main() {
    std::process::exit(route_lmt::cli::run());
}
