fn main() {
    std::process::exit(evdeblur::cli::run(std::env::args_os()));
}
