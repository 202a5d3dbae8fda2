fn main() {
    std::process::exit(gradpath_cli::dispatch(std::env::args_os()));
}
