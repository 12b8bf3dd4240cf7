fn main() {
    std::process::exit(bopdmd::cli::run(std::env::args_os()));
}
