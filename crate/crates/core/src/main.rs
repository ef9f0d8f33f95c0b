fn main() {
    let code = kgmol::cli::dispatch(std::env::args_os());
    std::process::exit(code);
}
