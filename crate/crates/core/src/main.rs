use std::io;

fn main() {
    let code = pwa_mrac::cli::main_with(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
