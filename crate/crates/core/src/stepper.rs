//! The coupled time step and the step-size contract that keeps it positive.

use log::warn;
use thiserror::Error;

use crate::diagnostics::{record, update_ledger, DiagnosticsRecord, DissipationLedger, EnergyCoeffs};
use crate::fluid::{fluid_substep, FluidError, PoissonSolver};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::io::sink::OutputSink;
use crate::model::{
    chemotactic_velocity, make_initial_state, saturated_density, ModelError, ModelParams, Preset, SimState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advection {
    /// First-order upwind face values: positive and monotone under the CFL bound.
    Upwind1,
    /// Arithmetic face values: second order in space, no positivity guarantee.
    Central2,
}

impl Advection {
    pub fn name(self) -> &'static str {
        match self {
            Advection::Upwind1 => "upwind1",
            Advection::Central2 => "central2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepScheme {
    pub advection: Advection,
    pub dt_safety: f64,
    pub clip_negatives: bool,
}

impl Default for StepScheme {
    fn default() -> Self {
        StepScheme { advection: Advection::Upwind1, dt_safety: 0.4, clip_negatives: false }
    }
}

impl StepScheme {
    pub fn validate(&self) -> Result<(), StepError> {
        if self.dt_safety > 0.0 && self.dt_safety <= 1.0 {
            Ok(())
        } else {
            Err(StepError::Safety(self.dt_safety))
        }
    }
}

/// Switches for the stages of a step; all on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub advection: bool,
    pub chemotaxis: bool,
    pub diffusion: bool,
    pub reaction: bool,
    pub fluid: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { advection: true, chemotaxis: true, diffusion: true, reaction: true, fluid: true }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum StepError {
    #[error("dt_safety must lie in (0, 1], got {0}")]
    Safety(f64),
    #[error("time step {0} must be finite and >= 0")]
    BadDt(f64),
    #[error("CFL violated: dt {dt:e} exceeds stable step {stable:e}")]
    Cfl { dt: f64, stable: f64 },
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("non-finite values in field {0}")]
    NonFinite(&'static str),
}

/// Largest per-cell outflow rate Σ (outgoing face speed)/h.
fn max_outflow_rate(v: &VectorField) -> f64 {
    let g = v.grid();
    let h = g.spacing();
    let mut rate = vec![0.0; g.n_cells()];
    for a in 0..g.dim() {
        let comp = v.component(a);
        for (ci, ix) in g.cells().enumerate() {
            let (lo, hi) = g.cell_faces(a, ix);
            rate[ci] += (comp[hi].max(0.0) + (-comp[lo]).max(0.0)) / h[a];
        }
    }
    rate.into_iter().fold(0.0, f64::max)
}

/// `dt_safety` times the smallest of the transport, chemotactic-transport
/// and reaction limits. Diffusion is implicit and adds no limit.
pub fn stable_dt(state: &SimState, params: &ModelParams, scheme: &StepScheme) -> f64 {
    let adv = max_outflow_rate(&state.u);
    let chem = max_outflow_rate(&chemotactic_velocity(params, &state.n, &state.c));
    let reaction = state.m.max_abs() + state.n.max_abs() + 1.0;
    let limit = [adv, chem, reaction].into_iter().filter(|r| *r > 0.0).map(|r| 1.0 / r).fold(f64::INFINITY, f64::min);
    scheme.dt_safety * limit
}

/// Conservative finite-volume update `f -= dt div(F)` with face fluxes
/// `F = v · face_value`, where `face_value(lo, hi, v)` picks the transported
/// value from the two neighbouring cells.
fn transport(f: &mut ScalarField, v: &VectorField, dt: f64, face_value: impl Fn(f64, f64, f64) -> f64) {
    let g = *f.grid();
    let h = g.spacing();
    let old = f.values().to_vec();
    let out = f.values_mut();
    for a in 0..g.dim() {
        let comp = v.component(a);
        let scale = dt / h[a];
        for ix in g.faces(a) {
            let vf = comp[g.face_index(a, ix)];
            if vf == 0.0 {
                continue;
            }
            if let (Some(lo), Some(hi)) = g.face_cells(a, ix) {
                let (il, ih) = (g.cell_index(lo), g.cell_index(hi));
                let flux = vf * face_value(old[il], old[ih], vf) * scale;
                out[il] -= flux;
                out[ih] += flux;
            }
        }
    }
}

fn upwind(lo: f64, hi: f64, v: f64) -> f64 {
    if v > 0.0 {
        lo
    } else {
        hi
    }
}

fn thomas_neumann(line: &mut [f64], sigma: f64, cp: &mut [f64]) {
    let n = line.len();
    let diag = |i: usize| 1.0 + sigma * if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
    let mut denom = diag(0);
    cp[0] = -sigma / denom;
    line[0] /= denom;
    for i in 1..n {
        denom = diag(i) + sigma * cp[i - 1];
        cp[i] = -sigma / denom;
        line[i] = (line[i] + sigma * line[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        line[i] -= cp[i] * line[i + 1];
    }
}

/// Exact inverse of the periodic line operator `I - σ δ²` as a positive
/// circulant kernel.
fn periodic_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let r = 2.0 * sigma / ((1.0 + 2.0 * sigma) + (1.0 + 4.0 * sigma).sqrt());
    let mut k: Vec<f64> = (0..n).map(|j| r.powi(j as i32) + r.powi((n - j) as i32)).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Implicit Euler for `f_t = Δf`, split into one line solve per axis. Each
/// line solve is a nonnegative, mass-preserving averaging, so positivity,
/// total mass and the maximum are preserved.
pub fn diffuse_implicit(f: &mut ScalarField, dt: f64) {
    let g = *f.grid();
    let s = g.shape();
    for a in 0..g.dim() {
        let n = s[a];
        let sigma = dt / (g.spacing()[a] * g.spacing()[a]);
        if sigma == 0.0 {
            continue;
        }
        let stride = match a {
            0 => s[1] * s[2],
            1 => s[2],
            _ => 1,
        };
        let kernel = if g.is_periodic() { Some(periodic_kernel(n, sigma)) } else { None };
        let mut line = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let data = f.values_mut();
        for ix in g.cells().filter(|ix| ix[a] == 0) {
            let start = (ix[0] * s[1] + ix[1]) * s[2] + ix[2];
            for p in 0..n {
                line[p] = data[start + p * stride];
            }
            match &kernel {
                None => thomas_neumann(&mut line, sigma, &mut scratch),
                Some(k) => {
                    for (i, o) in scratch.iter_mut().enumerate() {
                        *o = (0..n).map(|j| k[(i + n - j) % n] * line[j]).sum();
                    }
                    line.copy_from_slice(&scratch);
                }
            }
            for p in 0..n {
                data[start + p * stride] = line[p];
            }
        }
    }
}

/// `step` with every stage enabled.
pub fn step(
    state: &SimState,
    params: &ModelParams,
    scheme: &StepScheme,
    solver: &mut PoissonSolver,
    dt: f64,
) -> Result<SimState, StepError> {
    step_stages(state, params, scheme, solver, dt, Stages::default())
}

/// One split step: (1) transport of n, c, m by u; (2) chemotactic flux of n
/// with face speed from the incoming state and upwinded density n/(1+εn);
/// (3) implicit diffusion; (4) reactions with linearly implicit loss terms;
/// (5) fluid substep.
pub fn step_stages(
    state: &SimState,
    params: &ModelParams,
    scheme: &StepScheme,
    solver: &mut PoissonSolver,
    dt: f64,
    stages: Stages,
) -> Result<SimState, StepError> {
    scheme.validate()?;
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(StepError::BadDt(dt));
    }
    let stable = stable_dt(state, params, scheme);
    if dt > stable * (1.0 + 1e-12) {
        return Err(StepError::Cfl { dt, stable });
    }
    let mut next = state.clone();
    if stages.advection {
        let fv = match scheme.advection {
            Advection::Upwind1 => upwind,
            Advection::Central2 => |lo: f64, hi: f64, _v: f64| 0.5 * (lo + hi),
        };
        for f in [&mut next.n, &mut next.c, &mut next.m] {
            transport(f, &state.u, dt, fv);
        }
    }
    if stages.chemotaxis {
        let v = chemotactic_velocity(params, &state.n, &state.c);
        let eps = params.epsilon;
        transport(&mut next.n, &v, dt, |lo, hi, vf| saturated_density(upwind(lo, hi, vf), eps));
    }
    if stages.diffusion {
        for f in [&mut next.n, &mut next.c, &mut next.m] {
            diffuse_implicit(f, dt);
        }
    }
    if stages.reaction {
        let n_old = next.n.values().to_vec();
        let m_old = next.m.values().to_vec();
        for (i, v) in next.n.values_mut().iter_mut().enumerate() {
            *v /= 1.0 + dt * m_old[i];
        }
        for (i, v) in next.m.values_mut().iter_mut().enumerate() {
            *v /= 1.0 + dt * n_old[i];
        }
        for (i, v) in next.c.values_mut().iter_mut().enumerate() {
            *v = (*v + dt * m_old[i]) / (1.0 + dt);
        }
    }
    if stages.fluid {
        let (u, p) = fluid_substep(&next, params, dt, solver)?;
        next.u = u;
        next.p = p;
    }
    next.t = state.t + dt;
    if let Some(field) = next.non_finite_field() {
        return Err(StepError::NonFinite(field));
    }
    if scheme.clip_negatives {
        for (f, name) in [(&mut next.n, "n"), (&mut next.c, "c"), (&mut next.m, "m")] {
            let min = f.min();
            if min < 0.0 {
                warn!("clipping negative {name} (min {min:e}) at t = {}", next.t);
                f.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }
    Ok(next)
}

/// Run controls beyond the model and scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunControl {
    /// Fixed step; `None` uses `stable_dt` at every step.
    pub dt: Option<f64>,
    /// Upper bound on automatically chosen steps.
    pub dt_max: Option<f64>,
    /// Snapshot every this many steps (the initial and final states are always kept).
    pub snapshot_every: usize,
    pub coeffs: EnergyCoeffs,
}

impl Default for RunControl {
    fn default() -> Self {
        RunControl { dt: None, dt_max: None, snapshot_every: 10, coeffs: EnergyCoeffs::default() }
    }
}

/// Snapshots, per-step records and the ledger after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub snapshots: Vec<SimState>,
    pub records: Vec<DiagnosticsRecord>,
    pub ledgers: Vec<DissipationLedger>,
}

impl Trajectory {
    pub fn final_state(&self) -> &SimState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    /// Snapshot closest to time `t`.
    pub fn snapshot_near(&self, t: f64) -> &SimState {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {index} at t = {t}: {source}")]
    Step { index: usize, t: f64, source: StepError },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, RunError::Step { source: StepError::Fluid(FluidError::SolverFailure { .. }), .. })
            || matches!(self, RunError::Step { source: StepError::NonFinite(_), .. })
    }
}

/// Builds the initial state and advances it to `params.run_t`.
pub fn run(
    params: &ModelParams,
    scheme: &StepScheme,
    grid: Grid,
    preset: Preset,
    solver: &mut PoissonSolver,
    control: &RunControl,
    sink: &mut dyn OutputSink,
) -> Result<Trajectory, RunError> {
    let state = make_initial_state(grid, preset)?;
    run_from(params, scheme, state, solver, control, sink)
}

/// Advances a given initial state to `params.run_t`.
pub fn run_from(
    params: &ModelParams,
    scheme: &StepScheme,
    initial: SimState,
    solver: &mut PoissonSolver,
    control: &RunControl,
    sink: &mut dyn OutputSink,
) -> Result<Trajectory, RunError> {
    params.validate()?;
    let step_err = |index, t, source| RunError::Step { index, t, source };
    scheme.validate().map_err(|e| step_err(0, initial.t, e))?;
    let grid = *initial.grid();
    let t_end = params.run_t;
    let every = control.snapshot_every.max(1);
    let mut state = initial;
    let mut ledger = DissipationLedger::default();
    let first = record(&state, params, control.coeffs);
    sink.record(&first, &ledger)?;
    sink.snapshot(0, &state)?;
    let mut traj = Trajectory { grid, snapshots: vec![state.clone()], records: vec![first], ledgers: vec![ledger] };
    let mut index = 0;
    while t_end - state.t > 1e-12 * t_end.max(1.0) {
        index += 1;
        let remaining = t_end - state.t;
        let dt = match control.dt {
            Some(d) => d,
            None => {
                let s = stable_dt(&state, params, scheme);
                control.dt_max.map_or(s, |m| s.min(m))
            }
        };
        let last = dt >= remaining;
        let dt = dt.min(remaining);
        let mut next = step(&state, params, scheme, solver, dt).map_err(|e| step_err(index, state.t, e))?;
        if last {
            next.t = t_end;
        }
        ledger = update_ledger(&ledger, &next, params, dt);
        let mut rec = record(&next, params, control.coeffs);
        rec.dt = dt;
        sink.record(&rec, &ledger)?;
        traj.records.push(rec);
        traj.ledgers.push(ledger);
        if index % every == 0 || last {
            sink.snapshot(traj.snapshots.len(), &next)?;
            traj.snapshots.push(next.clone());
        }
        state = next;
    }
    Ok(traj)
}
