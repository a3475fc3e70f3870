fn main() {
    std::process::exit(memaudit_cli::run(std::env::args_os()));
}
