fn main() {
    std::process::exit(qmeta::cli::main_entry(std::env::args_os()));
}
