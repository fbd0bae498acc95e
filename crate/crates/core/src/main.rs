fn main() -> std::process::ExitCode {
    fsg_lab::cli::main_with_args(std::env::args_os())
}
