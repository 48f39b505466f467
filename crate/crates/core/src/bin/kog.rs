fn main() -> std::process::ExitCode {
    kog_core::cli::main_with_args(std::env::args_os())
}
