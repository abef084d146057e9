use std::io::Write;

fn main() {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = ushap::cli::run_from_args(std::env::args_os(), &mut out);
    let _ = out.flush();
    if let Err(e) = result {
        eprintln!("ushap: {e}");
        std::process::exit(e.exit_code());
    }
}
