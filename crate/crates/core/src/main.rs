fn main() {
    std::process::exit(exprkit::cli::main_entry());
}
