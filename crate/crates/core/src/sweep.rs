//! Parameter sweeps: convergence in the Yosida parameter ε and stability
//! across sensitivity exponents α.
//!
//! Runs are independent, so they execute on the rayon pool; each run gets
//! its own solver clone and results are assembled in input order, so the
//! tables do not depend on scheduling.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{envelope_fit, DiagnosticsRecord, DissipationLedger, LEDGER_NAMES};
use crate::fluid::PoissonSolver;
use crate::grid::{face_dot, lp_norm, ScalarField, VectorField};
use crate::io::config::{ConfigError, RunConfig};
use crate::io::csv::DirSink;
use crate::io::sink::{NullSink, OutputSink};
use crate::model::{make_initial_state, SimState};
use crate::stepper::{run_from, RunError, StepError, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVariable {
    Epsilon,
    Alpha,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepNorm {
    /// ‖·‖_{L^r} with r = `n_norm_exponent(α)`.
    NLr,
    CL2,
    ML2,
    UL2,
}

impl SweepNorm {
    pub const ALL: [SweepNorm; 4] = [SweepNorm::NLr, SweepNorm::CL2, SweepNorm::ML2, SweepNorm::UL2];

    pub fn name(self) -> &'static str {
        match self {
            SweepNorm::NLr => "n_Lr",
            SweepNorm::CL2 => "c_L2",
            SweepNorm::ML2 => "m_L2",
            SweepNorm::UL2 => "u_L2",
        }
    }
}

/// Exponent of the density distance: 3α + 1 below α = 1/3, else 2.
pub fn n_norm_exponent(alpha: f64) -> f64 {
    if alpha < 1.0 / 3.0 {
        3.0 * alpha + 1.0
    } else {
        2.0
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep plan: {0}")]
    Plan(String),
    #[error("invalid base configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("run with {variable} = {value} failed: {source}")]
    Run { variable: &'static str, value: f64, source: RunError },
}

impl SweepError {
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, SweepError::Run { source, .. } if source.is_solver_failure())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub norms: Vec<SweepNorm>,
    /// Comparison time for ε distances; defaults to T/2.
    pub compare_time: f64,
    /// If set, run `j` writes its diagnostics and snapshots to `<dir>/run_<j>`.
    pub output_dir: Option<PathBuf>,
    /// Run sequentially instead of on the thread pool.
    pub serial: bool,
}

impl SweepPlan {
    pub fn new(base: RunConfig, variable: SweepVariable, values: Vec<f64>) -> Self {
        let compare_time = 0.5 * base.run_t;
        SweepPlan {
            base,
            variable,
            values,
            norms: SweepNorm::ALL.to_vec(),
            compare_time,
            output_dir: None,
            serial: false,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Plan(m));
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("values must be finite and >= 0".into());
        }
        match self.variable {
            SweepVariable::Epsilon => {
                if self.values.len() < 3 {
                    return bad(format!("an epsilon sweep needs at least 3 values, got {}", self.values.len()));
                }
                if self.values.windows(2).any(|w| w[1] > w[0]) {
                    return bad("epsilon values must be non-increasing".into());
                }
                if !(self.compare_time >= 0.0 && self.compare_time <= self.base.run_t) {
                    return bad(format!("compare_time {} outside [0, T]", self.compare_time));
                }
                if self.norms.is_empty() {
                    return bad("no norms selected".into());
                }
            }
            SweepVariable::Alpha => {
                if self.values.is_empty() {
                    return bad("no alpha values".into());
                }
            }
        }
        Ok(())
    }

    fn config_for(&self, value: f64) -> RunConfig {
        let mut c = self.base.clone();
        match self.variable {
            SweepVariable::Epsilon => c.epsilon = value,
            SweepVariable::Alpha => c.alpha = value,
        }
        c
    }
}

/// Runs one configuration from its preset to `stop` (≤ T) and then to T.
/// Returns the state at `stop` and the full trajectory.
fn run_one(
    cfg: &RunConfig,
    solver: &PoissonSolver,
    stop: f64,
    dir: Option<PathBuf>,
) -> Result<(SimState, Trajectory), RunError> {
    let grid = *solver.grid();
    let mut solver = solver.clone();
    let scheme = cfg.scheme();
    let control = cfg.control();
    let mut params = cfg.params(grid);
    let initial = make_initial_state(grid, cfg.initial_preset())?;
    let mut dir_sink = match dir {
        Some(d) => Some(DirSink::create(&d)?),
        None => None,
    };
    let mut null = NullSink;
    let sink: &mut dyn OutputSink = match dir_sink.as_mut() {
        Some(s) => s,
        None => &mut null,
    };
    let t_end = params.run_t;
    params.run_t = stop;
    let first = run_from(&params, &scheme, initial, &mut solver, &control, sink)?;
    let mid = first.final_state().clone();
    let traj = if stop < t_end {
        params.run_t = t_end;
        let base = *first.ledgers.last().unwrap();
        let mut tail = Continuation { inner: sink, base, offset: first.snapshots.len() - 1, started: false };
        let mut second = run_from(&params, &scheme, mid.clone(), &mut solver, &control, &mut tail)?;
        let mut traj = first;
        for l in second.ledgers.iter_mut() {
            *l = shifted(l, &base);
        }
        traj.records.extend_from_slice(&second.records[1..]);
        traj.ledgers.extend_from_slice(&second.ledgers[1..]);
        traj.snapshots.extend(second.snapshots.into_iter().skip(1));
        traj
    } else {
        first
    };
    if let Some(s) = dir_sink {
        s.finish()?;
    }
    Ok((mid, traj))
}

fn shifted(l: &DissipationLedger, base: &DissipationLedger) -> DissipationLedger {
    let mut a = l.as_array();
    for (x, b) in a.iter_mut().zip(base.as_array()) {
        *x += b;
    }
    DissipationLedger::from_array(a)
}

/// Forwards a resumed run to a sink as if it had never stopped: drops the
/// repeated initial row and snapshot, shifts ledgers and snapshot indices.
struct Continuation<'a> {
    inner: &'a mut dyn OutputSink,
    base: DissipationLedger,
    offset: usize,
    started: bool,
}

impl OutputSink for Continuation<'_> {
    fn record(&mut self, record: &DiagnosticsRecord, ledger: &DissipationLedger) -> std::io::Result<()> {
        if !self.started {
            self.started = true;
            return Ok(());
        }
        self.inner.record(record, &shifted(ledger, &self.base))
    }

    fn snapshot(&mut self, index: usize, state: &SimState) -> std::io::Result<()> {
        if index == 0 {
            return Ok(());
        }
        self.inner.snapshot(index + self.offset, state)
    }
}

fn map_runs<T: Send>(plan: &SweepPlan, f: impl Fn(usize, f64) -> T + Sync) -> Vec<T> {
    if plan.serial {
        plan.values.iter().enumerate().map(|(j, &v)| f(j, v)).collect()
    } else {
        plan.values.par_iter().enumerate().map(|(j, &v)| f(j, v)).collect()
    }
}

fn run_dir(plan: &SweepPlan, j: usize) -> Option<PathBuf> {
    plan.output_dir.as_ref().map(|d| d.join(format!("run_{j:03}")))
}

fn check_grid(plan: &SweepPlan, solver: &PoissonSolver) -> Result<(), SweepError> {
    let grid = plan.base.grid().map_err(|m| SweepError::Config(ConfigError { line: None, message: m }))?;
    if grid != *solver.grid() {
        return Err(SweepError::Plan("solver grid differs from the configured grid".into()));
    }
    Ok(())
}

/// Distance between two states in one norm.
pub fn state_distance(a: &SimState, b: &SimState, norm: SweepNorm, alpha: f64) -> f64 {
    let g = *a.grid();
    let diff = |x: &ScalarField, y: &ScalarField| {
        ScalarField::from_values(g, x.values().iter().zip(y.values()).map(|(p, q)| p - q).collect())
    };
    match norm {
        SweepNorm::NLr => lp_norm(&diff(&a.n, &b.n), n_norm_exponent(alpha)).expect("exponent >= 1"),
        SweepNorm::CL2 => lp_norm(&diff(&a.c, &b.c), 2.0).expect("exponent 2"),
        SweepNorm::ML2 => lp_norm(&diff(&a.m, &b.m), 2.0).expect("exponent 2"),
        SweepNorm::UL2 => {
            let mut d = VectorField::from_components(g, a.u.components().to_vec());
            d.axpy(-1.0, &b.u);
            face_dot(&d, &d).sqrt()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceColumn {
    pub norm: SweepNorm,
    /// `distances[j]` = ‖X_{ε_j} − X_{ε_{j+1}}‖.
    pub distances: Vec<f64>,
    /// Empirical orders log(d_j / d_{j+1}) / log(ε_j / ε_{j+1}).
    pub rates: Vec<f64>,
    pub inversions: usize,
    /// At most one increase along the sequence of distances.
    pub cauchy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub epsilons: Vec<f64>,
    pub compare_time: f64,
    pub n_exponent: f64,
    pub columns: Vec<ConvergenceColumn>,
}

impl ConvergenceTable {
    pub fn all_cauchy(&self) -> bool {
        self.columns.iter().all(|c| c.cauchy)
    }

    pub fn column(&self, norm: SweepNorm) -> Option<&ConvergenceColumn> {
        self.columns.iter().find(|c| c.norm == norm)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps_j,eps_j1");
        for c in &self.columns {
            let _ = write!(s, ",d_{0},rate_{0}", c.norm.name());
        }
        s.push('\n');
        for j in 0..self.epsilons.len().saturating_sub(1) {
            let _ = write!(s, "{:e},{:e}", self.epsilons[j], self.epsilons[j + 1]);
            for c in &self.columns {
                let rate = if j == 0 { f64::NAN } else { c.rates[j - 1] };
                let _ = write!(s, ",{:e},{:e}", c.distances[j], rate);
            }
            s.push('\n');
        }
        s
    }
}

/// Counts strict increases; growth below round-off of the larger value is ignored.
fn inversions(d: &[f64]) -> usize {
    d.windows(2).filter(|w| w[1] > w[0] + 1e-13 * w[0].abs().max(w[1].abs()).max(1e-300)).count()
}

/// Runs every ε in the plan and tabulates successive distances at `compare_time`.
pub fn epsilon_sweep(plan: &SweepPlan, solver: &PoissonSolver) -> Result<ConvergenceTable, SweepError> {
    plan.validate()?;
    if plan.variable != SweepVariable::Epsilon {
        return Err(SweepError::Plan("epsilon_sweep needs an epsilon plan".into()));
    }
    check_grid(plan, solver)?;
    let states = map_runs(plan, |j, eps| {
        run_one(&plan.config_for(eps), solver, plan.compare_time, run_dir(plan, j)).map(|(mid, _)| mid)
    });
    let states = states
        .into_iter()
        .zip(&plan.values)
        .map(|(r, &eps)| r.map_err(|source| SweepError::Run { variable: "epsilon", value: eps, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let alpha = plan.base.alpha;
    let columns = plan
        .norms
        .iter()
        .map(|&norm| {
            let distances: Vec<f64> = states.windows(2).map(|w| state_distance(&w[0], &w[1], norm, alpha)).collect();
            let rates = (1..distances.len())
                .map(|j| {
                    let e = &plan.values;
                    (distances[j - 1] / distances[j]).ln() / (e[j] / e[j + 1]).ln()
                })
                .collect();
            let inv = inversions(&distances);
            ConvergenceColumn { norm, distances, rates, inversions: inv, cauchy: inv <= 1 }
        })
        .collect();
    Ok(ConvergenceTable {
        epsilons: plan.values.clone(),
        compare_time: plan.compare_time,
        n_exponent: n_norm_exponent(alpha),
        columns,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// A field became non-finite.
    BlowUp(String),
    /// Any other step failure (stability bound, solver, ...).
    Failed(String),
}

impl RunOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Completed => "completed",
            RunOutcome::BlowUp(_) => "blow_up",
            RunOutcome::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub alpha: f64,
    pub within_theory: bool,
    pub outcome: RunOutcome,
    /// Largest ‖n‖∞ over recorded steps (NaN if the run did not complete).
    pub max_n: f64,
    pub final_energy: f64,
    /// Fitted growth rate of each ledger entry, in `LEDGER_NAMES` order.
    pub ledger_slopes: [f64; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
}

impl StabilityTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,within_theory,outcome,max_n,final_energy");
        for n in LEDGER_NAMES {
            let _ = write!(s, ",slope_{n}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{:e},{},{},{:e},{:e}",
                r.alpha,
                r.within_theory,
                r.outcome.label(),
                r.max_n,
                r.final_energy
            );
            for v in r.ledger_slopes {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

fn stability_row(alpha: f64, result: Result<(SimState, Trajectory), RunError>) -> Result<StabilityRow, SweepError> {
    let failed = |outcome| StabilityRow {
        alpha,
        within_theory: alpha > 0.0,
        outcome,
        max_n: f64::NAN,
        final_energy: f64::NAN,
        ledger_slopes: [f64::NAN; 8],
    };
    match result {
        Ok((_, traj)) => {
            let max_n = traj.records.iter().map(|r| r.sup_n).fold(0.0, f64::max);
            let final_energy = traj.records.last().map_or(f64::NAN, |r| r.energy);
            let mut ledger_slopes = [f64::NAN; 8];
            for (k, slope) in ledger_slopes.iter_mut().enumerate() {
                let series: Vec<(f64, f64)> =
                    traj.records.iter().zip(&traj.ledgers).map(|(r, l)| (r.t, l.as_array()[k])).collect();
                if let Ok(fit) = envelope_fit(&series) {
                    *slope = fit.slope;
                }
            }
            Ok(StabilityRow {
                alpha,
                within_theory: alpha > 0.0,
                outcome: RunOutcome::Completed,
                max_n,
                final_energy,
                ledger_slopes,
            })
        }
        Err(RunError::Step { source: StepError::NonFinite(f), t, .. }) => {
            Ok(failed(RunOutcome::BlowUp(format!("{f} non-finite at t = {t}"))))
        }
        Err(e @ RunError::Step { .. }) => Ok(failed(RunOutcome::Failed(e.to_string()))),
        Err(source) => Err(SweepError::Run { variable: "alpha", value: alpha, source }),
    }
}

/// Runs every α in the plan; per-run step failures become row outcomes.
pub fn alpha_sweep(plan: &SweepPlan, solver: &PoissonSolver) -> Result<StabilityTable, SweepError> {
    plan.validate()?;
    if plan.variable != SweepVariable::Alpha {
        return Err(SweepError::Plan("alpha_sweep needs an alpha plan".into()));
    }
    check_grid(plan, solver)?;
    let t_end = plan.base.run_t;
    let results = map_runs(plan, |j, a| run_one(&plan.config_for(a), solver, t_end, run_dir(plan, j)));
    let rows = plan.values.iter().zip(results).map(|(&a, r)| stability_row(a, r)).collect::<Result<_, _>>()?;
    Ok(StabilityTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> RunConfig {
        RunConfig { shape: vec![12, 12], run_t: 0.1, dt_max: Some(0.02), ..RunConfig::default() }
    }

    #[test]
    fn norm_exponent_case_split() {
        assert_eq!(n_norm_exponent(0.0), 1.0);
        assert_eq!(n_norm_exponent(0.1), 3.0 * 0.1 + 1.0);
        assert_eq!(n_norm_exponent(1.0 / 3.0), 2.0);
        assert_eq!(n_norm_exponent(2.0), 2.0);
    }

    #[test]
    fn degenerate_epsilons_give_zero_distances() {
        let base = small_base();
        let solver = base.solver(base.grid().unwrap()).unwrap();
        let plan = SweepPlan::new(base, SweepVariable::Epsilon, vec![0.0, 0.0, 0.0]);
        let t = epsilon_sweep(&plan, &solver).unwrap();
        for c in &t.columns {
            assert_eq!(c.distances, vec![0.0, 0.0]);
            assert!(c.cauchy);
        }
    }

    #[test]
    fn plan_validation() {
        let base = small_base();
        let solver = base.solver(base.grid().unwrap()).unwrap();
        let plan = SweepPlan::new(base.clone(), SweepVariable::Epsilon, vec![0.1, 0.2, 0.05]);
        assert!(matches!(epsilon_sweep(&plan, &solver), Err(SweepError::Plan(_))));
        let plan = SweepPlan::new(base.clone(), SweepVariable::Epsilon, vec![0.1, 0.05]);
        assert!(matches!(epsilon_sweep(&plan, &solver), Err(SweepError::Plan(_))));
        let plan = SweepPlan::new(base, SweepVariable::Alpha, vec![-1.0]);
        assert!(matches!(alpha_sweep(&plan, &solver), Err(SweepError::Plan(_))));
    }

    #[test]
    fn alpha_rows_label_and_repeat() {
        let base = small_base();
        let solver = base.solver(base.grid().unwrap()).unwrap();
        let plan = SweepPlan::new(base, SweepVariable::Alpha, vec![0.0, 1.0, 1.0]);
        let t = alpha_sweep(&plan, &solver).unwrap();
        assert!(!t.rows[0].within_theory);
        assert!(t.rows[1].within_theory);
        assert_eq!(t.rows[1], t.rows[2]);
        assert_eq!(t.rows[1].outcome, RunOutcome::Completed);
        assert!(t.rows[1].max_n.is_finite());
    }
}
