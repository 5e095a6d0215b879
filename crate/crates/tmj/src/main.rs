fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(tmj::cli::main())
}
