use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stagflow::cases::{CaseId, CaseSetup, CaseSpec};
use stagflow::harness::selftest::run_selftest;
use stagflow::harness::{read_report, run_benchmark, Baseline, BenchmarkConfig, Launch, ScalingTable};
use stagflow::schemes::Scheme;
use stagflow::stepper::SimConfig;

#[derive(Parser)]
#[command(name = "stagflow", version, about = "Staggered-grid LES solver and strong-scaling benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a benchmark case and write its timing report.
    Run {
        #[arg(long, default_value = "cavity")]
        case: CaseId,
        /// Global cells as nx,ny,nz.
        #[arg(long, value_parser = parse_triple)]
        grid: Option<[usize; 3]>,
        /// Workers per axis as tx,ty,tz.
        #[arg(long, value_parser = parse_triple, default_value = "1,1,1")]
        topology: [usize; 3],
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        steps: Option<usize>,
        /// Trailing steps averaged in the report.
        #[arg(long)]
        window: Option<usize>,
        /// JSON object overriding solver settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Progress line every N steps (0 = quiet).
        #[arg(long, default_value_t = 10)]
        progress: usize,
    },
    /// Build a scaling table from timing reports.
    Scale {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "first")]
        baseline: Baseline,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick invariant checks.
    Selftest,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected three values, got {}", v.len()))
}

fn merge(dst: &mut serde_json::Value, src: serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

/// Overlay the keys of a JSON object onto the case defaults.
fn apply_overrides(base: &SimConfig, path: &Path) -> Result<SimConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let over: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let serde_json::Value::Object(over) = over else {
        return Err(format!("{}: expected a JSON object", path.display()));
    };
    let mut merged = serde_json::to_value(base).map_err(|e| e.to_string())?;
    merge(&mut merged, serde_json::Value::Object(over));
    serde_json::from_value(merged).map_err(|e| format!("{}: {e}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn run(
    case: CaseId,
    grid: Option<[usize; 3]>,
    topology: [usize; 3],
    scheme: Option<Scheme>,
    steps: Option<usize>,
    window: Option<usize>,
    config: Option<PathBuf>,
    out: PathBuf,
    progress: usize,
) -> Result<(), String> {
    let mut setup: CaseSetup = CaseSpec::for_case(case, grid).setup().map_err(|e| e.to_string())?;
    if let Some(p) = &config {
        setup.config = apply_overrides(&setup.config, p)?;
    }
    if let Some(s) = scheme {
        setup.config.scheme = s;
    }
    if let Some(n) = steps {
        setup.config.steps = n;
    }
    let steps = setup.config.steps;
    let window = window.unwrap_or(steps);
    let launch = Launch::from_env().map_err(|e| e.to_string())?;
    let cfg = BenchmarkConfig { setup, topology, steps, window, launch, progress_every: progress };
    let report = run_benchmark(&cfg).map_err(|e| e.to_string())?;
    if let Some(r) = report {
        let stem = format!(
            "{}_{}x{}x{}_{}w",
            r.case, r.grid[0], r.grid[1], r.grid[2], r.workers
        );
        let (csv, json) = r.write(&out, &stem).map_err(|e| e.to_string())?;
        println!(
            "T_TT {:.6e} s (std {:.3e})  T_CD {:.3e}  T_P {:.3e}  T_LS {:.3e}  T_up {:.3e}",
            r.averages.t_tt, r.t_tt_std, r.averages.t_cd, r.averages.t_p, r.averages.t_ls, r.averages.t_up
        );
        println!("wrote {} and {}", csv.display(), json.display());
    }
    Ok(())
}

fn scale(inputs: &[PathBuf], baseline: Baseline, out: Option<PathBuf>) -> Result<(), String> {
    let reports = inputs
        .iter()
        .map(|p| read_report(p).map_err(|e| format!("{}: {e}", p.display())))
        .collect::<Result<Vec<_>, _>>()?;
    let table = ScalingTable::from_reports(&reports, baseline).map_err(|e| e.to_string())?;
    let csv = table.to_csv();
    match out {
        Some(p) => std::fs::write(&p, csv).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { case, grid, topology, scheme, steps, window, config, out, progress } => {
            run(case, grid, topology, scheme, steps, window, config, out, progress)
        }
        Cmd::Scale { inputs, baseline, out } => scale(&inputs, baseline, out),
        Cmd::Selftest => {
            let checks = run_selftest();
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                Err("selftest failed".into())
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
