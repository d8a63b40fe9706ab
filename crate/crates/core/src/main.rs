fn main() -> std::process::ExitCode {
    peda::cli::main_exit()
}
