fn main() {
    std::process::exit(strep_cli::commands::main_impl(std::env::args_os()));
}
