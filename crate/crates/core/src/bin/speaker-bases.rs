fn main() {
    std::process::exit(speaker_bases::cli::run(std::env::args_os()));
}
