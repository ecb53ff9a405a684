fn main() {
    if let Err(e) = jumplq::cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(jumplq::cli::EXIT_INPUT);
    }
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    let code = jumplq::cli::run(std::env::args_os(), &mut out, &mut err);
    std::process::exit(code);
}
