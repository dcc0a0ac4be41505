fn main() -> std::process::ExitCode {
    adaptkit::cli::main()
}
