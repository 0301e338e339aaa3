use std::fs;
use std::io;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use graphfid::sweep::{config_from_cli, run_sweep, write_csv, write_csv_to, Cli};

const CONFIG_ERROR: u8 = 2;
const SOLVER_ERROR: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(CONFIG_ERROR),
            };
        }
    };
    let cfg = match config_from_cli(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("graphfid: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let out = match run_sweep(&cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("graphfid: {e}");
            return ExitCode::from(SOLVER_ERROR);
        }
    };
    let written = match &cfg.output {
        Some(path) => write_csv(&out.rows, &out.metadata, path),
        None => write_csv_to(io::stdout().lock(), &out.rows, &out.metadata),
    };
    if let Err(e) = written {
        eprintln!("graphfid: {e}");
        return ExitCode::from(SOLVER_ERROR);
    }
    if let (Some(path), Some(bytes)) = (&cfg.dump_samples, &out.samples) {
        if let Err(e) = fs::write(path, bytes) {
            eprintln!("graphfid: i/o error on {}: {e}", path.display());
            return ExitCode::from(SOLVER_ERROR);
        }
    }
    eprintln!(
        "graphfid: {} rows in {:.3} s",
        out.rows.len(),
        out.wall_time.as_secs_f64()
    );
    ExitCode::SUCCESS
}
