//! Benchmark protocol: worker launch, per-step timing records, reports and
//! strong-scaling tables.

pub mod profiler;
pub mod selftest;

use std::fmt::Write as _;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::{CaseId, CaseSetup};
use crate::exchange::{run_inproc, Comm, ExchangeError, SocketTransport, WorkerError};
use crate::mesh::MeshError;
use crate::stepper::{SimState, Solver, StepError};

use profiler::Phase;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("run stopped after {completed} of {expected} steps: {cause}")]
    ReportIncomplete { completed: usize, expected: usize, cause: String },
    #[error("times must be positive")]
    NonPositiveTime,
    #[error("reports describe different runs: {0}")]
    MetadataMismatch(String),
    #[error("no single-worker report for a serial baseline")]
    MissingSerialBaseline,
    #[error("no reports given")]
    NoReports,
    #[error("worker failure: {0}")]
    Worker(String),
    #[error("invalid launch settings: {0}")]
    Launch(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("report format error: {0}")]
    Json(#[from] serde_json::Error),
}

/// How ranks are started.
#[derive(Clone, Debug, PartialEq)]
pub enum Launch {
    /// All ranks as threads of this process.
    InProc,
    /// This process is one rank of a TCP job.
    Socket { rank: usize, peers: Vec<SocketAddr> },
}

impl Launch {
    /// `STAGFLOW_TRANSPORT=inproc|socket`, with `STAGFLOW_PEERS` (comma-separated
    /// host:port per rank) and `STAGFLOW_RANK` for sockets.
    pub fn from_env() -> Result<Self, HarnessError> {
        let kind = std::env::var("STAGFLOW_TRANSPORT").unwrap_or_else(|_| "inproc".into());
        match kind.as_str() {
            "inproc" | "" => Ok(Launch::InProc),
            "socket" => {
                let peers = std::env::var("STAGFLOW_PEERS")
                    .map_err(|_| HarnessError::Launch("STAGFLOW_PEERS not set".into()))?
                    .split(',')
                    .map(|s| s.trim().parse::<SocketAddr>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| HarnessError::Launch(format!("bad peer address: {e}")))?;
                let rank = std::env::var("STAGFLOW_RANK")
                    .map_err(|_| HarnessError::Launch("STAGFLOW_RANK not set".into()))?
                    .parse::<usize>()
                    .map_err(|e| HarnessError::Launch(format!("bad rank: {e}")))?;
                if rank >= peers.len() {
                    return Err(HarnessError::Launch(format!("rank {rank} outside {} peers", peers.len())));
                }
                Ok(Launch::Socket { rank, peers })
            }
            other => Err(HarnessError::Launch(format!("unknown transport '{other}'"))),
        }
    }
}

fn rank_body<T>(
    setup: &CaseSetup,
    plan: &crate::mesh::DecompositionPlan,
    comm: Comm,
    f: &(dyn Fn(&mut Solver, &mut SimState) -> Result<T, StepError> + Sync),
) -> Result<T, StepError> {
    let sub = plan.subdomain(comm.rank()).clone();
    let mut state = setup.initial_state(&sub);
    let mut solver = Solver::new(sub, setup.config.clone(), setup.boundaries.clone(), comm)?;
    solver.initialize(&mut state)?;
    f(&mut solver, &mut state)
}

/// Run `f` on every rank of the decomposition after initialization. Results come
/// back in rank order; with a socket launch only this process' rank is returned.
pub fn run_parallel<T: Send>(
    setup: &CaseSetup,
    topology: [usize; 3],
    launch: &Launch,
    f: impl Fn(&mut Solver, &mut SimState) -> Result<T, StepError> + Sync,
) -> Result<Vec<T>, HarnessError> {
    let plan = setup.plan(topology)?;
    match launch {
        Launch::InProc => {
            let results = run_inproc(plan.workers(), |comm| rank_body(setup, &plan, comm, &f));
            collect_workers(results)
        }
        Launch::Socket { rank, peers } => {
            if peers.len() != plan.workers() {
                return Err(HarnessError::Launch(format!(
                    "{} peers for {} workers",
                    peers.len(),
                    plan.workers()
                )));
            }
            let t = SocketTransport::connect(*rank, peers, Duration::from_secs(60)).map_err(StepError::from)?;
            Ok(vec![rank_body(setup, &plan, Comm::new(Box::new(t)), &f)?])
        }
    }
}

fn collect_workers<T>(results: Vec<Result<T, WorkerError<StepError>>>) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::with_capacity(results.len());
    let mut first: Option<HarnessError> = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                let secondary = matches!(&e, WorkerError::Failed(StepError::Exchange(ExchangeError::TransportFailure(_))));
                let err = match e {
                    WorkerError::Failed(s) => HarnessError::Step(s),
                    WorkerError::Panicked(m) => HarnessError::Worker(m),
                };
                if first.is_none() || (!secondary && matches!(first, Some(HarnessError::Step(StepError::Exchange(_))))) {
                    first = Some(err);
                }
            }
        }
    }
    match first {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Timing of one step on the master rank (seconds).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub t_tt: f64,
    pub t_ls: f64,
    pub t_cd: f64,
    pub t_p: f64,
    pub t_up: f64,
    pub comm: f64,
    pub pressure_cycles: usize,
    pub divergence: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseAverages {
    pub t_tt: f64,
    pub t_ls: f64,
    pub t_cd: f64,
    pub t_p: f64,
    pub t_up: f64,
    pub comm: f64,
}

/// Shares of the averaged step time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub level_set: f64,
    pub fluxes: f64,
    pub pressure: f64,
    pub update: f64,
    /// Remaining untimed or minor phases (time step, eddy viscosity).
    pub other: f64,
    pub communication: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub case: CaseId,
    pub grid: [usize; 3],
    pub topology: [usize; 3],
    pub workers: usize,
    /// Workers per node is one here, so each worker counts as a node.
    pub node_equivalents: usize,
    pub scheme: String,
    pub window: usize,
    pub records: Vec<StepRecord>,
    pub averages: PhaseAverages,
    /// Population standard deviation of `T_TT` over the window.
    pub t_tt_std: f64,
    pub breakdown: Breakdown,
}

pub const CSV_HEADER: &str = "step,t,dt,T_TT,T_LS,T_CD,T_P,T_up,comm";

impl TimingReport {
    /// Build averages over the last `window` records.
    pub fn from_records(
        case: CaseId,
        grid: [usize; 3],
        topology: [usize; 3],
        scheme: &str,
        window: usize,
        records: Vec<StepRecord>,
    ) -> Self {
        let w = window.clamp(1, records.len().max(1));
        let tail = &records[records.len().saturating_sub(w)..];
        let m = tail.len().max(1) as f64;
        let mean = |f: fn(&StepRecord) -> f64| tail.iter().map(f).sum::<f64>() / m;
        let averages = PhaseAverages {
            t_tt: mean(|r| r.t_tt),
            t_ls: mean(|r| r.t_ls),
            t_cd: mean(|r| r.t_cd),
            t_p: mean(|r| r.t_p),
            t_up: mean(|r| r.t_up),
            comm: mean(|r| r.comm),
        };
        let var = tail.iter().map(|r| (r.t_tt - averages.t_tt).powi(2)).sum::<f64>() / m;
        let frac = |v: f64| if averages.t_tt > 0.0 { v / averages.t_tt } else { 0.0 };
        let breakdown = Breakdown {
            level_set: frac(averages.t_ls),
            fluxes: frac(averages.t_cd),
            pressure: frac(averages.t_p),
            update: frac(averages.t_up),
            other: frac(averages.t_tt - averages.t_ls - averages.t_cd - averages.t_p - averages.t_up),
            communication: frac(averages.comm),
        };
        let workers = topology.iter().product();
        TimingReport {
            case,
            grid,
            topology,
            workers,
            node_equivalents: workers,
            scheme: scheme.to_string(),
            window: w,
            records,
            averages,
            t_tt_std: var.sqrt(),
            breakdown,
        }
    }

    /// Phase times fit inside the total (2% slack) and communication inside the total.
    pub fn check_invariants(&self) -> Result<(), String> {
        let a = &self.averages;
        let parts = a.t_ls + a.t_cd + a.t_p + a.t_up;
        if parts > 1.02 * a.t_tt {
            return Err(format!("phase sum {parts:e} exceeds 1.02 * T_TT {:e}", a.t_tt));
        }
        if a.comm > a.t_tt {
            return Err(format!("communication {:e} exceeds T_TT {:e}", a.comm, a.t_tt));
        }
        for r in &self.records {
            let s = r.t_ls + r.t_cd + r.t_p + r.t_up;
            if s > 1.02 * r.t_tt || r.comm > r.t_tt {
                return Err(format!("step {} breaks the timing invariants", r.step));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.step, r.t, r.dt, r.t_tt, r.t_ls, r.t_cd, r.t_p, r.t_up, r.comm
            );
        }
        s
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        Ok((csv, json))
    }
}

pub fn read_report(path: &Path) -> Result<TimingReport, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn speedup(t1: f64, tn: f64) -> Result<f64, HarnessError> {
    if !(t1 > 0.0 && tn > 0.0) {
        return Err(HarnessError::NonPositiveTime);
    }
    Ok(t1 / tn)
}

/// `(P T_p) / (Q T_q)` as written.
pub fn efficiency(p: f64, tp: f64, q: f64, tq: f64) -> Result<f64, HarnessError> {
    if !(p > 0.0 && tp > 0.0 && q > 0.0 && tq > 0.0) {
        return Err(HarnessError::NonPositiveTime);
    }
    Ok(p * tp / (q * tq))
}

/// Conventional efficiency `(Q T_q) / (P T_p)`: 1 for ideal scaling from Q to P workers.
pub fn efficiency_normalized(p: f64, tp: f64, q: f64, tq: f64) -> Result<f64, HarnessError> {
    Ok(1.0 / efficiency(p, tp, q, tq)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Smallest worker count among the inputs.
    First,
    /// The single-worker run.
    Serial,
}

impl std::str::FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(Baseline::First),
            "serial" => Ok(Baseline::Serial),
            o => Err(format!("unknown baseline '{o}' (expected first or serial)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub t_n: f64,
    pub s_n: f64,
    pub efficiency: f64,
    pub efficiency_normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub case: CaseId,
    pub grid: [usize; 3],
    pub baseline_workers: usize,
    pub baseline_time: f64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn from_reports(reports: &[TimingReport], baseline: Baseline) -> Result<Self, HarnessError> {
        let first = reports.first().ok_or(HarnessError::NoReports)?;
        for r in reports {
            if r.case != first.case || r.grid != first.grid || r.scheme != first.scheme {
                return Err(HarnessError::MetadataMismatch(format!(
                    "{} {:?} {} vs {} {:?} {}",
                    first.case, first.grid, first.scheme, r.case, r.grid, r.scheme
                )));
            }
        }
        let mut sorted: Vec<&TimingReport> = reports.iter().collect();
        sorted.sort_by_key(|r| r.workers);
        let base = match baseline {
            Baseline::First => sorted[0],
            Baseline::Serial => *sorted.iter().find(|r| r.workers == 1).ok_or(HarnessError::MissingSerialBaseline)?,
        };
        let (q, tq) = (base.workers as f64, base.averages.t_tt);
        let rows = sorted
            .iter()
            .map(|r| {
                let (p, tp) = (r.workers as f64, r.averages.t_tt);
                Ok(ScalingRow {
                    n: r.workers,
                    t_n: tp,
                    s_n: speedup(tq, tp)?,
                    efficiency: efficiency(p, tp, q, tq)?,
                    efficiency_normalized: efficiency_normalized(p, tp, q, tq)?,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(ScalingTable { case: first.case, grid: first.grid, baseline_workers: base.workers, baseline_time: tq, rows })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,T_n,S_n,E,E_normalized\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:.6},{:.6},{:.6}", r.n, r.t_n, r.s_n, r.efficiency, r.efficiency_normalized);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub setup: CaseSetup,
    pub topology: [usize; 3],
    pub steps: usize,
    pub window: usize,
    pub launch: Launch,
    /// Print a progress line every N steps on the master rank (0 = quiet).
    pub progress_every: usize,
}

/// Run the protocol and return the master rank's report (`None` on other socket ranks).
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Option<TimingReport>, HarnessError> {
    let steps = cfg.steps;
    let every = cfg.progress_every;
    let completed = std::sync::atomic::AtomicUsize::new(0);
    let out = run_parallel(&cfg.setup, cfg.topology, &cfg.launch, |solver, state| {
        let mut records = Vec::with_capacity(steps);
        solver.profiler.take();
        for _ in 0..steps {
            let c0 = solver.comm.comm_time();
            let stats = solver.step(state)?;
            if solver.comm.rank() == 0 {
                completed.store(state.step, std::sync::atomic::Ordering::Relaxed);
            }
            let comm = (solver.comm.comm_time() - c0).as_secs_f64();
            let t = solver.profiler.take();
            let rec = StepRecord {
                step: state.step,
                t: state.t,
                dt: stats.dt,
                t_tt: t.get(Phase::Total),
                t_ls: t.get(Phase::LevelSet),
                t_cd: t.get(Phase::Fluxes),
                t_p: t.get(Phase::Pressure),
                t_up: t.get(Phase::Update),
                comm,
                pressure_cycles: stats.pressure_cycles,
                divergence: stats.divergence,
            };
            if every > 0 && solver.comm.rank() == 0 && state.step % every == 0 {
                eprintln!(
                    "step {:>5}  t {:.5e}  dt {:.3e}  T_TT {:.3e}s  cycles {}",
                    rec.step, rec.t, rec.dt, rec.t_tt, rec.pressure_cycles
                );
            }
            records.push(rec);
        }
        Ok((solver.comm.rank(), records))
    });
    let out = match out {
        Ok(v) => v,
        Err(e @ (HarnessError::Step(_) | HarnessError::Worker(_))) => {
            return Err(HarnessError::ReportIncomplete {
                completed: completed.load(std::sync::atomic::Ordering::Relaxed),
                expected: steps,
                cause: e.to_string(),
            });
        }
        Err(e) => return Err(e),
    };
    let master = out.into_iter().find(|(rank, _)| *rank == 0).map(|(_, r)| r);
    Ok(master.map(|records| {
        TimingReport::from_records(
            cfg.setup.id,
            cfg.setup.grid.dims,
            cfg.topology,
            cfg.setup.config.scheme.name(),
            cfg.window,
            records,
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, tt: f64) -> StepRecord {
        StepRecord { step, t_tt: tt, t_cd: 0.5 * tt, t_p: 0.3 * tt, comm: 0.1 * tt, ..StepRecord::default() }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(speedup(100.0, 25.0).unwrap(), 4.0);
        assert_eq!(efficiency(2.0, 50.0, 1.0, 100.0).unwrap(), 1.0);
        assert_eq!(efficiency(2.0, 100.0, 1.0, 100.0).unwrap(), 2.0);
        assert_eq!(efficiency_normalized(2.0, 100.0, 1.0, 100.0).unwrap(), 0.5);
        assert_eq!(speedup(100.0, 100.0).unwrap(), 1.0);
        assert!(matches!(speedup(0.0, 1.0), Err(HarnessError::NonPositiveTime)));
        assert!(matches!(efficiency(1.0, -1.0, 1.0, 1.0), Err(HarnessError::NonPositiveTime)));
    }

    #[test]
    fn window_average_and_single_step() {
        let recs: Vec<_> = (1..=50).map(|s| rec(s, if s <= 10 { 9.0 } else { 1.0 })).collect();
        let r = TimingReport::from_records(CaseId::Cavity, [32; 3], [1, 1, 1], "cd4", 40, recs);
        assert_eq!(r.records.len(), 50);
        assert_eq!(r.averages.t_tt, 1.0);
        assert_eq!(r.t_tt_std, 0.0);
        r.check_invariants().unwrap();
        let one = TimingReport::from_records(CaseId::Cavity, [32; 3], [1, 1, 1], "cd4", 1, vec![rec(1, 2.5)]);
        assert_eq!(one.averages.t_tt, 2.5);
        let b = one.breakdown;
        assert!(b.level_set + b.fluxes + b.pressure + b.update <= 1.02);
    }

    #[test]
    fn csv_header_and_json_round_trip() {
        let r = TimingReport::from_records(CaseId::Tgv, [16; 3], [2, 1, 1], "weno5", 2, vec![rec(1, 1.0), rec(2, 2.0)]);
        assert!(r.to_csv().starts_with("step,t,dt,T_TT,T_LS,T_CD,T_P,T_up,comm\n"));
        let dir = tempfile::tempdir().unwrap();
        let (_, json) = r.write(dir.path(), "run").unwrap();
        assert_eq!(read_report(&json).unwrap(), r);
    }

    #[test]
    fn scaling_table_checks_metadata() {
        let a = TimingReport::from_records(CaseId::Cavity, [32; 3], [1, 1, 1], "cd4", 1, vec![rec(1, 4.0)]);
        let b = TimingReport::from_records(CaseId::Cavity, [32; 3], [2, 1, 1], "cd4", 1, vec![rec(1, 2.0)]);
        let t = ScalingTable::from_reports(&[b.clone(), a.clone()], Baseline::Serial).unwrap();
        assert_eq!(t.rows[1].s_n, 2.0);
        assert_eq!(t.rows[1].efficiency_normalized, 1.0);
        let c = TimingReport::from_records(CaseId::Cavity, [64; 3], [2, 1, 1], "cd4", 1, vec![rec(1, 2.0)]);
        assert!(matches!(ScalingTable::from_reports(&[a, c], Baseline::First), Err(HarnessError::MetadataMismatch(_))));
        assert!(matches!(ScalingTable::from_reports(&[b], Baseline::Serial), Err(HarnessError::MissingSerialBaseline)));
    }
}
