use std::process::ExitCode;

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("LTV_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot configure {n} threads: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: LTV_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::from(ltv::cli::run(std::env::args_os()) as u8)
}
