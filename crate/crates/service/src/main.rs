fn main() -> std::process::ExitCode {
    clarify_service::cli::main()
}
