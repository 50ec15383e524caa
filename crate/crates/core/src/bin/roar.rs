fn main() -> std::process::ExitCode {
    roar::cli::run(std::env::args_os())
}
