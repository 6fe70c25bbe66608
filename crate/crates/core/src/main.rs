fn main() {
    std::process::exit(augr::cli::dispatch(std::env::args_os()));
}
