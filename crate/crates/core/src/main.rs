mod cli;

use clap::Parser;

fn main() {
    let args = match cli::Cli::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // Usage errors are configuration errors (exit 1), not clap's default 2.
            let code = if e.use_stderr() { cli::EXIT_CONFIG } else { cli::EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli::run(args) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::process::exit(code);
}
