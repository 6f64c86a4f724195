//! Residuals of the integral identities defining weak solutions, evaluated
//! on stored trajectories against closed-form test functions.
//!
//! Test functions are `X(x) τ(t)` with a temporal taper `τ` equal to 1 up
//! to 90% of the final time and smoothly zero at the final time. Time
//! integrals use the midpoint rule on consecutive snapshots (fields
//! averaged, test function at the interval midpoint); space integrals pair
//! discrete fields with exact values and derivatives of the test function
//! at cell centres or faces.

use std::f64::consts::PI;

use thiserror::Error;

use crate::fluid::{yosida, FluidError, PoissonSolver};
use crate::grid::{gradient, Grid, ScalarField, VectorField};
use crate::model::{buoyancy_force, regularized_flux, ModelParams, SimState};
use crate::stepper::Trajectory;

pub const MIN_SNAPSHOTS: usize = 16;
const TAPER_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum WeakError {
    #[error("weak residuals need at least {MIN_SNAPSHOTS} snapshots, got {0}")]
    InsufficientSnapshots(usize),
    #[error("vector test function is not divergence-free (|div| up to {0:e})")]
    NonSolenoidal(f64),
    #[error("test function not admissible: {0}")]
    NotAdmissible(&'static str),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

/// Temporal taper on [0, t_end].
#[derive(Clone, Copy, Debug)]
struct Taper {
    t_end: f64,
}

impl Taper {
    fn value(&self, t: f64) -> f64 {
        let t0 = (1.0 - TAPER_FRACTION) * self.t_end;
        if t <= t0 {
            1.0
        } else if t >= self.t_end {
            0.0
        } else {
            let s = (t - t0) / (TAPER_FRACTION * self.t_end);
            1.0 - s * s * (3.0 - 2.0 * s)
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        let t0 = (1.0 - TAPER_FRACTION) * self.t_end;
        if t <= t0 || t >= self.t_end {
            0.0
        } else {
            let w = TAPER_FRACTION * self.t_end;
            let s = (t - t0) / w;
            -6.0 * s * (1.0 - s) / w
        }
    }
}

/// Spatial shapes of scalar test functions; all have zero normal derivative
/// on box walls and are periodic on periodic grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarShape {
    /// Π (1/2 + 16 s²(1-s)²), s = x/L per axis.
    Polynomial,
    /// Π cos(π k s) in box mode, Π cos(2π k s) when periodic.
    SeparableCosine {
        k: [u32; 3],
    },
    ConstantInSpace,
}

/// Linear combination of scalar shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub terms: Vec<(f64, ScalarShape)>,
}

impl TestFunction {
    pub fn new(shape: ScalarShape) -> Self {
        TestFunction { terms: vec![(1.0, shape)] }
    }

    /// `a f + b g`.
    pub fn combine(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        let mut terms: Vec<_> = f.terms.iter().map(|&(c, s)| (a * c, s)).collect();
        terms.extend(g.terms.iter().map(|&(c, s)| (b * c, s)));
        TestFunction { terms }
    }

    /// Spatial value and gradient.
    pub fn spatial(&self, grid: &Grid, x: [f64; 3]) -> (f64, [f64; 3]) {
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for &(c, shape) in &self.terms {
            let (sv, sg) = shape_eval(shape, grid, x);
            v += c * sv;
            for a in 0..3 {
                g[a] += c * sg[a];
            }
        }
        (v, g)
    }
}

fn shape_eval(shape: ScalarShape, grid: &Grid, x: [f64; 3]) -> (f64, [f64; 3]) {
    let d = grid.dim();
    let l = grid.extent();
    let periodic = grid.is_periodic();
    let factor = |a: usize| -> (f64, f64) {
        let s = x[a] / l[a];
        match shape {
            ScalarShape::Polynomial => {
                let q = s * s * (1.0 - s) * (1.0 - s);
                let dq = 2.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
                (0.5 + 16.0 * q, 16.0 * dq / l[a])
            }
            ScalarShape::SeparableCosine { k } => {
                let w = if periodic { 2.0 } else { 1.0 } * PI * k[a] as f64;
                ((w * s).cos(), -w * (w * s).sin() / l[a])
            }
            ScalarShape::ConstantInSpace => (1.0, 0.0),
        }
    };
    let f: Vec<(f64, f64)> = (0..d).map(factor).collect();
    let value: f64 = f.iter().map(|p| p.0).product();
    let mut grad = [0.0; 3];
    for (a, ga) in grad.iter_mut().enumerate().take(d) {
        *ga = (0..d).map(|b| if a == b { f[b].1 } else { f[b].0 }).product();
    }
    (value, grad)
}

/// Shapes of divergence-free vector test functions. The first two are the
/// curl of a stream function ψ = Π f(x_a/L_a) with f(0) = f'(0) = f(1) =
/// f'(1) = 0, so the field vanishes on box walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VectorShape {
    /// f(s) = 16 s²(1-s)².
    Polynomial,
    /// f(s) = sin²(π k s).
    SeparableCosine { k: [u32; 3] },
    /// A constant vector; periodic grids only.
    ConstantInSpace { direction: [f64; 3] },
    /// φ(x) = M (x - centre). Divergence-free only if tr M = 0. Not zero on walls.
    Affine { matrix: [[f64; 3]; 3] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorTestFunction {
    pub terms: Vec<(f64, VectorShape)>,
}

/// Value, Jacobian `J[i][j] = ∂_j φ_i` and Laplacian of a spatial vector field.
type VectorJet = ([f64; 3], [[f64; 3]; 3], [f64; 3]);

impl VectorTestFunction {
    pub fn new(shape: VectorShape) -> Self {
        VectorTestFunction { terms: vec![(1.0, shape)] }
    }

    pub fn combine(a: f64, f: &VectorTestFunction, b: f64, g: &VectorTestFunction) -> Self {
        let mut terms: Vec<_> = f.terms.iter().map(|&(c, s)| (a * c, s)).collect();
        terms.extend(g.terms.iter().map(|&(c, s)| (b * c, s)));
        VectorTestFunction { terms }
    }

    pub fn spatial(&self, grid: &Grid, x: [f64; 3]) -> VectorJet {
        let mut v = [0.0; 3];
        let mut j = [[0.0; 3]; 3];
        let mut lap = [0.0; 3];
        for &(c, shape) in &self.terms {
            let (sv, sj, sl) = vector_shape_eval(shape, grid, x);
            for a in 0..3 {
                v[a] += c * sv[a];
                lap[a] += c * sl[a];
                for b in 0..3 {
                    j[a][b] += c * sj[a][b];
                }
            }
        }
        (v, j, lap)
    }

    fn admissible(&self, grid: &Grid) -> Result<(), WeakError> {
        for &(_, shape) in &self.terms {
            if matches!(shape, VectorShape::ConstantInSpace { .. }) && !grid.is_periodic() {
                return Err(WeakError::NotAdmissible("constant vector fields do not vanish on walls"));
            }
        }
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for ix in grid.cells() {
            let (v, j, _) = self.spatial(grid, grid.cell_center(ix));
            let div: f64 = (0..grid.dim()).map(|a| j[a][a]).sum();
            worst = worst.max(div.abs());
            scale = scale.max(v.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
        }
        if worst > 1e-10 * (1.0 + scale) {
            return Err(WeakError::NonSolenoidal(worst));
        }
        Ok(())
    }
}

/// Derivative of order `k` (≤ 3) of the 1D stream factor at s.
fn stream_factor(shape: VectorShape, axis: usize, s: f64, k: usize) -> f64 {
    match shape {
        VectorShape::Polynomial => {
            // 16 (s⁴ - 2s³ + s²)
            16.0 * match k {
                0 => s.powi(4) - 2.0 * s.powi(3) + s * s,
                1 => 4.0 * s.powi(3) - 6.0 * s * s + 2.0 * s,
                2 => 12.0 * s * s - 12.0 * s + 2.0,
                _ => 24.0 * s - 12.0,
            }
        }
        VectorShape::SeparableCosine { k: kk } => {
            // sin²(w s) = (1 - cos(2 w s)) / 2
            let w2 = 2.0 * PI * kk[axis] as f64;
            let c = (w2 * s).cos();
            let sn = (w2 * s).sin();
            match k {
                0 => 0.5 * (1.0 - c),
                1 => 0.5 * w2 * sn,
                2 => 0.5 * w2 * w2 * c,
                _ => -0.5 * w2 * w2 * w2 * sn,
            }
        }
        _ => unreachable!("stream factors exist only for stream shapes"),
    }
}

fn stream_derivative(shape: VectorShape, grid: &Grid, x: [f64; 3], orders: [usize; 3]) -> f64 {
    let l = grid.extent();
    (0..grid.dim()).map(|a| stream_factor(shape, a, x[a] / l[a], orders[a]) / l[a].powi(orders[a] as i32)).product()
}

fn vector_shape_eval(shape: VectorShape, grid: &Grid, x: [f64; 3]) -> VectorJet {
    let d = grid.dim();
    match shape {
        VectorShape::ConstantInSpace { direction } => {
            let mut v = [0.0; 3];
            v[..d].copy_from_slice(&direction[..d]);
            (v, [[0.0; 3]; 3], [0.0; 3])
        }
        VectorShape::Affine { matrix } => {
            let l = grid.extent();
            let mut v = [0.0; 3];
            let mut j = [[0.0; 3]; 3];
            for i in 0..d {
                for k in 0..d {
                    v[i] += matrix[i][k] * (x[k] - 0.5 * l[k]);
                    j[i][k] = matrix[i][k];
                }
            }
            (v, j, [0.0; 3])
        }
        _ => {
            // φ = (∂_y ψ, -∂_x ψ, 0)
            let comps: [([usize; 3], f64); 2] = [([0, 1, 0], 1.0), ([1, 0, 0], -1.0)];
            let mut v = [0.0; 3];
            let mut j = [[0.0; 3]; 3];
            let mut lap = [0.0; 3];
            for (i, (base, sign)) in comps.iter().enumerate() {
                v[i] = sign * stream_derivative(shape, grid, x, *base);
                for b in 0..d {
                    let mut o = *base;
                    o[b] += 1;
                    j[i][b] = sign * stream_derivative(shape, grid, x, o);
                    let mut o2 = *base;
                    o2[b] += 2;
                    lap[i] += sign * stream_derivative(shape, grid, x, o2);
                }
            }
            (v, j, lap)
        }
    }
}

/// Midpoint state of two snapshots.
fn average(a: &SimState, b: &SimState) -> SimState {
    let avg_s = |x: &ScalarField, y: &ScalarField| {
        ScalarField::from_values(*x.grid(), x.values().iter().zip(y.values()).map(|(p, q)| 0.5 * (p + q)).collect())
    };
    let mut u = a.u.clone();
    u.scale(0.5);
    u.axpy(0.5, &b.u);
    SimState {
        t: 0.5 * (a.t + b.t),
        n: avg_s(&a.n, &b.n),
        c: avg_s(&a.c, &b.c),
        m: avg_s(&a.m, &b.m),
        u,
        p: avg_s(&a.p, &b.p),
    }
}

fn check_snapshots(traj: &Trajectory) -> Result<Taper, WeakError> {
    if traj.snapshots.len() < MIN_SNAPSHOTS {
        return Err(WeakError::InsufficientSnapshots(traj.snapshots.len()));
    }
    Ok(Taper { t_end: traj.final_state().t })
}

/// Σ_cells f_i X(x_i) |cell|.
fn cell_pair(f: &[f64], xs: &[f64], vol: f64) -> f64 {
    f.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() * vol
}

/// Face pairing Σ_a Σ_f v_f ∂_a X(x_f) |cell|.
fn face_pair(v: &VectorField, grads: &[Vec<f64>], vol: f64) -> f64 {
    (0..v.grid().dim()).map(|a| v.component(a).iter().zip(&grads[a]).map(|(p, q)| p * q).sum::<f64>()).sum::<f64>()
        * vol
}

/// Precomputed spatial parts of a scalar test function on the grid.
struct ScalarSamples {
    cell_value: Vec<f64>,
    face_grad: Vec<Vec<f64>>,
}

fn sample_scalar(grid: &Grid, phi: &TestFunction) -> ScalarSamples {
    let cell_value = grid.cells().map(|ix| phi.spatial(grid, grid.cell_center(ix)).0).collect();
    let face_grad = (0..grid.dim())
        .map(|a| grid.faces(a).map(|ix| phi.spatial(grid, grid.face_center(a, ix)).1[a]).collect())
        .collect();
    ScalarSamples { cell_value, face_grad }
}

/// Face field n_f u_f with arithmetic face averages.
fn advective_flux(f: &ScalarField, u: &VectorField) -> VectorField {
    let g = *f.grid();
    let comps =
        (0..g.dim()).map(|a| f.face_average(a).iter().zip(u.component(a)).map(|(x, y)| x * y).collect()).collect();
    VectorField::from_components(g, comps)
}

/// Shared skeleton of the three scalar identities:
/// `-∫∫ f φ_t - ∫ f₀ φ(0) + ∫∫ ∇f·∇φ - ∫∫ u f·∇φ - ∫∫ extra_flux·∇φ + ∫∫ sink φ`.
fn scalar_residual(
    traj: &Trajectory,
    phi: &TestFunction,
    field: impl Fn(&SimState) -> &ScalarField,
    extra_flux: impl Fn(&SimState) -> Option<VectorField>,
    sink: impl Fn(&SimState) -> Vec<f64>,
) -> Result<f64, WeakError> {
    let taper = check_snapshots(traj)?;
    let g = traj.grid;
    let vol = g.cell_volume();
    let samples = sample_scalar(&g, phi);
    let s0 = &traj.snapshots[0];
    let mut total = -cell_pair(field(s0).values(), &samples.cell_value, vol) * taper.value(s0.t);
    for w in traj.snapshots.windows(2) {
        let dt = w[1].t - w[0].t;
        let mid = average(&w[0], &w[1]);
        let tv = taper.value(mid.t);
        let td = taper.derivative(mid.t);
        let f = field(&mid);
        let mut acc = -td * cell_pair(f.values(), &samples.cell_value, vol);
        let mut flux = gradient(f);
        flux.axpy(-1.0, &advective_flux(f, &mid.u));
        if let Some(extra) = extra_flux(&mid) {
            flux.axpy(-1.0, &extra);
        }
        acc += tv * face_pair(&flux, &samples.face_grad, vol);
        acc += tv * cell_pair(&sink(&mid), &samples.cell_value, vol);
        total += dt * acc;
    }
    Ok(total)
}

/// Sperm equation residual, with the regularized chemotactic flux.
pub fn residual_n(traj: &Trajectory, params: &ModelParams, phi: &TestFunction) -> Result<f64, WeakError> {
    scalar_residual(
        traj,
        phi,
        |s| &s.n,
        |s| Some(regularized_flux(params, s)),
        |s| s.n.values().iter().zip(s.m.values()).map(|(n, m)| n * m).collect(),
    )
}

/// Chemical equation residual: sink `c - m`.
pub fn residual_c(traj: &Trajectory, _params: &ModelParams, phi: &TestFunction) -> Result<f64, WeakError> {
    scalar_residual(
        traj,
        phi,
        |s| &s.c,
        |_| None,
        |s| s.c.values().iter().zip(s.m.values()).map(|(c, m)| c - m).collect(),
    )
}

/// Egg equation residual: sink `n m`.
pub fn residual_m(traj: &Trajectory, _params: &ModelParams, phi: &TestFunction) -> Result<f64, WeakError> {
    scalar_residual(
        traj,
        phi,
        |s| &s.m,
        |_| None,
        |s| s.n.values().iter().zip(s.m.values()).map(|(n, m)| n * m).collect(),
    )
}

/// Momentum residual
/// `-∫∫u·φ_t - ∫u₀·φ(0) - κ∫∫(Y_ε u ⊗ u):∇φ + ∫∫∇u:∇φ - ∫∫(n+m)∇Φ·φ`.
/// The viscous pairing is evaluated as `-∫∫u·Δφ`, equal to it for fields
/// vanishing on the walls. The test field must be divergence-free.
pub fn residual_u(traj: &Trajectory, params: &ModelParams, phi: &VectorTestFunction) -> Result<f64, WeakError> {
    let taper = check_snapshots(traj)?;
    let g = traj.grid;
    phi.admissible(&g)?;
    let vol = g.cell_volume();
    let d = g.dim();
    let face_vals: Vec<Vec<f64>> =
        (0..d).map(|a| g.faces(a).map(|ix| phi.spatial(&g, g.face_center(a, ix)).0[a]).collect()).collect();
    let face_laps: Vec<Vec<f64>> =
        (0..d).map(|a| g.faces(a).map(|ix| phi.spatial(&g, g.face_center(a, ix)).2[a]).collect()).collect();
    let cell_jac: Vec<[[f64; 3]; 3]> = g.cells().map(|ix| phi.spatial(&g, g.cell_center(ix)).1).collect();
    let mut solver =
        if params.kappa != 0.0 && params.epsilon > 0.0 { Some(PoissonSolver::default_for(g)) } else { None };
    let pair = |v: &VectorField, w: &[Vec<f64>]| face_pair(v, w, vol);
    let s0 = &traj.snapshots[0];
    let mut total = -pair(&s0.u, &face_vals) * taper.value(s0.t);
    for win in traj.snapshots.windows(2) {
        let dt = win[1].t - win[0].t;
        let mid = average(&win[0], &win[1]);
        let tv = taper.value(mid.t);
        let td = taper.derivative(mid.t);
        let mut acc = -td * pair(&mid.u, &face_vals);
        acc -= tv * pair(&mid.u, &face_laps);
        acc -= tv * pair(&buoyancy_force(params, &mid), &face_vals);
        if params.kappa != 0.0 {
            let w = match solver.as_mut() {
                Some(s) => yosida(&mid.u, params.epsilon, s)?,
                None => mid.u.clone(),
            };
            let uc = mid.u.cell_centered();
            let wc = w.cell_centered();
            let conv: f64 = (0..g.n_cells())
                .map(|ci| {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += uc[ci][i] * wc[ci][j] * cell_jac[ci][i][j];
                        }
                    }
                    s
                })
                .sum::<f64>()
                * vol;
            acc -= tv * params.kappa * conv;
        }
        total += dt * acc;
    }
    Ok(total)
}

/// Residuals of all four identities for one scalar and one vector test function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRow {
    pub n: f64,
    pub c: f64,
    pub m: f64,
    pub u: f64,
}

pub fn residual_row(
    traj: &Trajectory,
    params: &ModelParams,
    phi: &TestFunction,
    psi: &VectorTestFunction,
) -> Result<ResidualRow, WeakError> {
    Ok(ResidualRow {
        n: residual_n(traj, params, phi)?,
        c: residual_c(traj, params, phi)?,
        m: residual_m(traj, params, phi)?,
        u: residual_u(traj, params, psi)?,
    })
}

/// Default library: three scalar and three vector test functions.
pub fn standard_test_functions(grid: &Grid) -> Vec<(&'static str, TestFunction, VectorTestFunction)> {
    let third = if grid.is_periodic() {
        VectorShape::ConstantInSpace { direction: [1.0, 0.5, 0.25] }
    } else {
        VectorShape::SeparableCosine { k: [1, 2, 1] }
    };
    vec![
        ("polynomial", TestFunction::new(ScalarShape::Polynomial), VectorTestFunction::new(VectorShape::Polynomial)),
        (
            "cosine",
            TestFunction::new(ScalarShape::SeparableCosine { k: [1, 1, 1] }),
            VectorTestFunction::new(VectorShape::SeparableCosine { k: [1, 1, 1] }),
        ),
        ("constant", TestFunction::new(ScalarShape::ConstantInSpace), VectorTestFunction::new(third)),
    ]
}
