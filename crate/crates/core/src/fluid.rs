//! Incompressible flow: Leray projection, the Yosida-regularized convecting
//! velocity and one fluid substep.

use std::cell::RefCell;

use thiserror::Error;

use crate::grid::{divergence, gradient, laplacian, BcMode, Grid, Quantity, ScalarField, VectorField};
use crate::linsolve::{no_precond, pcg};
use crate::model::{buoyancy_force, ModelParams, SimState};
use crate::spectral::{LineKind, SeparableSolver};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoissonMethod {
    /// Fourier diagonalization; periodic grids only.
    SpectralPeriodic,
    /// Cosine diagonalization; box grids only.
    SpectralNeumann,
    /// Matrix-free conjugate gradients on the cell Laplacian (either mode).
    ConjugateGradientNeumann,
}

impl PoissonMethod {
    pub fn name(self) -> &'static str {
        match self {
            PoissonMethod::SpectralPeriodic => "spectral_periodic",
            PoissonMethod::SpectralNeumann => "spectral_neumann",
            PoissonMethod::ConjugateGradientNeumann => "cg",
        }
    }

    /// Spectral method that fits the boundary mode.
    pub fn spectral_for(bc: BcMode) -> Self {
        match bc {
            BcMode::Box => PoissonMethod::SpectralNeumann,
            BcMode::Periodic => PoissonMethod::SpectralPeriodic,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FluidError {
    #[error("Poisson method {method} cannot be used with {bc} boundaries")]
    MethodBc { method: &'static str, bc: &'static str },
    #[error("{what} did not converge: residual {residual:e} after {iterations} iterations")]
    SolverFailure { what: &'static str, residual: f64, iterations: usize },
    #[error("CFL violated: velocity {velocity:e} on {axis}-face {face:?} with dt {dt:e} exceeds one cell per step")]
    Cfl { axis: usize, face: [usize; 3], velocity: f64, dt: f64 },
    #[error("solver tolerance must be > 0 and max_iter >= 1")]
    Settings,
}

/// Pressure Poisson solver plus the separable vector Helmholtz solver used
/// for the viscous step and as the Yosida preconditioner. Owns scratch
/// buffers; use one instance per concurrently running simulation.
#[derive(Clone, Debug)]
pub struct PoissonSolver {
    grid: Grid,
    method: PoissonMethod,
    tol: f64,
    max_iter: usize,
    scalar: Option<SeparableSolver>,
    vector: Vec<SeparableSolver>,
}

fn axis_spec(grid: &Grid, kind: impl Fn(usize) -> LineKind) -> [Option<(LineKind, usize, f64)>; 3] {
    let mut out = [None; 3];
    for (a, o) in out.iter_mut().enumerate().take(grid.dim()) {
        *o = Some((kind(a), grid.shape()[a], grid.spacing()[a]));
    }
    out
}

fn flatten(v: &VectorField) -> Vec<f64> {
    v.components().iter().flatten().copied().collect()
}

fn unflatten(grid: Grid, data: &[f64]) -> VectorField {
    let mut comps = Vec::with_capacity(grid.dim());
    let mut off = 0;
    for a in 0..grid.dim() {
        let n = grid.n_faces(a);
        comps.push(data[off..off + n].to_vec());
        off += n;
    }
    VectorField::from_components(grid, comps)
}

impl PoissonSolver {
    pub fn new(grid: Grid, method: PoissonMethod, tol: f64, max_iter: usize) -> Result<Self, FluidError> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(FluidError::Settings);
        }
        let bad = matches!(
            (method, grid.bc()),
            (PoissonMethod::SpectralPeriodic, BcMode::Box) | (PoissonMethod::SpectralNeumann, BcMode::Periodic)
        );
        if bad {
            return Err(FluidError::MethodBc { method: method.name(), bc: grid.bc().name() });
        }
        let periodic = grid.is_periodic();
        let scalar = match method {
            PoissonMethod::ConjugateGradientNeumann => None,
            _ => Some(SeparableSolver::new(axis_spec(&grid, |_| {
                if periodic {
                    LineKind::Periodic
                } else {
                    LineKind::CellNeumann
                }
            }))),
        };
        let vector = (0..grid.dim())
            .map(|comp| {
                SeparableSolver::new(axis_spec(&grid, |b| match (periodic, b == comp) {
                    (true, _) => LineKind::Periodic,
                    (false, true) => LineKind::NodeDirichlet,
                    (false, false) => LineKind::CellWall,
                }))
            })
            .collect();
        Ok(PoissonSolver { grid, method, tol, max_iter, scalar, vector })
    }

    /// Spectral solver matching the grid's boundary mode, tolerance 1e-10.
    pub fn default_for(grid: Grid) -> Self {
        Self::new(grid, PoissonMethod::spectral_for(grid.bc()), 1e-10, 10_000).expect("matching spectral method")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn method(&self) -> PoissonMethod {
        self.method
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    /// Zero-mean solution of `laplacian(q) = rhs - mean(rhs)` under the grid's
    /// boundary mode. Iterative solves stop once `max |rhs - Δq| <= tol`.
    pub fn solve_poisson(&mut self, rhs: &ScalarField) -> Result<ScalarField, FluidError> {
        let g = self.grid;
        let n = g.n_cells() as f64;
        let mean = rhs.values().iter().sum::<f64>() / n;
        let mut data: Vec<f64> = rhs.values().iter().map(|v| v - mean).collect();
        match &mut self.scalar {
            Some(s) => s.solve(0.0, -1.0, &mut data),
            None => {
                let b: Vec<f64> = data.iter().map(|v| -v).collect();
                let mut x = vec![0.0; b.len()];
                let apply = |x: &[f64], y: &mut [f64]| {
                    let l = laplacian(&ScalarField::from_values(g, x.to_vec()));
                    for (yi, li) in y.iter_mut().zip(l.values()) {
                        *yi = -li;
                    }
                };
                let out = pcg(apply, no_precond, &b, &mut x, self.tol, self.max_iter);
                if !out.converged {
                    return Err(FluidError::SolverFailure {
                        what: "pressure Poisson solve",
                        residual: out.residual,
                        iterations: out.iterations,
                    });
                }
                data = x;
            }
        }
        let m = data.iter().sum::<f64>() / n;
        for v in data.iter_mut() {
            *v -= m;
        }
        Ok(ScalarField::from_values(g, data).with_quantity(Quantity::Pressure))
    }

    /// Solves `(I - b Δ_vec) x = f` directly. Wall faces of the result are zero.
    pub fn helmholtz_vector(&mut self, b: f64, f: &VectorField) -> VectorField {
        let g = self.grid;
        let periodic = g.is_periodic();
        let mut comps = Vec::with_capacity(g.dim());
        for a in 0..g.dim() {
            let solver = &mut self.vector[a];
            let fs = g.face_shape(a);
            let ss = solver.shape();
            let src = f.component(a);
            let off = if periodic { 0 } else { 1 };
            let mut buf = vec![0.0; ss.iter().product()];
            let map = |i: usize, j: usize, k: usize| {
                let mut ix = [i, j, k];
                ix[a] += off;
                (ix[0] * fs[1] + ix[1]) * fs[2] + ix[2]
            };
            let mut p = 0;
            for i in 0..ss[0] {
                for j in 0..ss[1] {
                    for k in 0..ss[2] {
                        buf[p] = src[map(i, j, k)];
                        p += 1;
                    }
                }
            }
            solver.solve(1.0, b, &mut buf);
            let mut out = vec![0.0; src.len()];
            let mut p = 0;
            for i in 0..ss[0] {
                for j in 0..ss[1] {
                    for k in 0..ss[2] {
                        out[map(i, j, k)] = buf[p];
                        p += 1;
                    }
                }
            }
            comps.push(out);
        }
        VectorField::from_components(g, comps)
    }
}

/// Leray projection: `u = u_star - gradient(q)` with `laplacian(q) =
/// divergence(u_star)`. Returns `q`; the pressure of a step of length dt is
/// `q / dt`.
pub fn project(u_star: &VectorField, solver: &mut PoissonSolver) -> Result<(VectorField, ScalarField), FluidError> {
    let q = solver.solve_poisson(&divergence(u_star))?;
    let mut u = u_star.clone();
    u.axpy(-1.0, &gradient(&q));
    u.zero_wall_faces();
    Ok((u, q))
}

/// Discrete `(I + εA)⁻¹ u` with `A = -P Δ_vec`. The input is projected
/// first, so the result is divergence-free. On periodic grids `P` and `Δ_vec`
/// commute and the resolvent is a single Helmholtz solve; in box mode it is
/// computed by conjugate gradients on the divergence-free subspace,
/// preconditioned with `P (I - εΔ_vec)⁻¹`.
pub fn yosida(u: &VectorField, epsilon: f64, solver: &mut PoissonSolver) -> Result<VectorField, FluidError> {
    if epsilon == 0.0 {
        return Ok(u.clone());
    }
    let g = solver.grid;
    if g.is_periodic() {
        return Ok(solver.helmholtz_vector(epsilon, u));
    }
    let (pu, _) = project(u, solver)?;
    let tol = solver.tol * pu.max_abs().max(1.0);
    let max_iter = solver.max_iter;
    let failure: RefCell<Option<FluidError>> = RefCell::new(None);
    let shared = RefCell::new(solver);
    let b = flatten(&pu);
    let apply = |x: &[f64], y: &mut [f64]| {
        let w = unflatten(g, x);
        let mut lap = crate::grid::vector_laplacian(&w);
        let mut s = shared.borrow_mut();
        match project(&lap, &mut s) {
            Ok((pl, _)) => lap = pl,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
            }
        }
        let mut out = w;
        out.axpy(-epsilon, &lap);
        y.copy_from_slice(&flatten(&out));
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        let mut s = shared.borrow_mut();
        let h = s.helmholtz_vector(epsilon, &unflatten(g, r));
        match project(&h, &mut s) {
            Ok((ph, _)) => z.copy_from_slice(&flatten(&ph)),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                z.copy_from_slice(r);
            }
        }
    };
    let mut x = vec![0.0; b.len()];
    {
        let mut s = shared.borrow_mut();
        let h = s.helmholtz_vector(epsilon, &pu);
        x.copy_from_slice(&flatten(&project(&h, &mut s)?.0));
    }
    let out = pcg(apply, precond, &b, &mut x, tol, max_iter);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if !out.converged {
        return Err(FluidError::SolverFailure {
            what: "Yosida resolvent",
            residual: out.residual,
            iterations: out.iterations,
        });
    }
    let mut w = unflatten(g, &x);
    w.zero_wall_faces();
    Ok(w)
}

fn shifted(fs: [usize; 3], periodic: bool, ix: [usize; 3], axis: usize, d: isize) -> Option<[usize; 3]> {
    let n = fs[axis] as isize;
    let j = ix[axis] as isize + d;
    let mut out = ix;
    if (0..n).contains(&j) {
        out[axis] = j as usize;
        Some(out)
    } else if periodic {
        out[axis] = j.rem_euclid(n) as usize;
        Some(out)
    } else {
        None
    }
}

fn lin(fs: [usize; 3], ix: [usize; 3]) -> usize {
    (ix[0] * fs[1] + ix[1]) * fs[2] + ix[2]
}

/// Skew-symmetric MAC convection `(w·∇)u`: on each velocity control volume
/// the face value of `w` multiplies the neighbour across that face, so
/// `face_dot(u, convection(w, u)) = 0` for every `w` vanishing on walls.
/// Wall-face entries are zero.
pub fn convection(w: &VectorField, u: &VectorField) -> VectorField {
    let g = *u.grid();
    let periodic = g.is_periodic();
    let h = g.spacing();
    let mut comps = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let fs = g.face_shape(a);
        let ua = u.component(a);
        let mut out = vec![0.0; ua.len()];
        for ix in g.faces(a) {
            if g.is_wall_face(a, ix) {
                continue;
            }
            let here = lin(fs, ix);
            let mut acc = 0.0;
            for b in 0..g.dim() {
                let (wp, wm, up, um);
                if b == a {
                    let wa = w.component(a);
                    let p = shifted(fs, periodic, ix, a, 1).expect("interior face");
                    let m = shifted(fs, periodic, ix, a, -1).expect("interior face");
                    wp = 0.5 * (wa[here] + wa[lin(fs, p)]);
                    wm = 0.5 * (wa[lin(fs, m)] + wa[here]);
                    up = ua[lin(fs, p)];
                    um = ua[lin(fs, m)];
                } else {
                    let fb = g.face_shape(b);
                    let wb = w.component(b);
                    let mut lo_cell = ix;
                    lo_cell[a] = if ix[a] == 0 { g.shape()[a] - 1 } else { ix[a] - 1 };
                    let hi_cell = ix;
                    let at = |cell: [usize; 3], node_shift: usize| {
                        let mut f = cell;
                        f[b] += node_shift;
                        if periodic {
                            f[b] %= g.shape()[b];
                        }
                        wb[lin(fb, f)]
                    };
                    wp = 0.5 * (at(lo_cell, 1) + at(hi_cell, 1));
                    wm = 0.5 * (at(lo_cell, 0) + at(hi_cell, 0));
                    up = shifted(fs, periodic, ix, b, 1).map_or(-ua[here], |p| ua[lin(fs, p)]);
                    um = shifted(fs, periodic, ix, b, -1).map_or(-ua[here], |m| ua[lin(fs, m)]);
                }
                acc += (wp * up - wm * um) / (2.0 * h[b]);
            }
            out[here] = acc;
        }
        comps.push(out);
    }
    VectorField::from_components(g, comps)
}

/// Largest `dt |w_f| / h` over faces, with its location.
fn worst_face(w: &VectorField, dt: f64) -> Option<(usize, [usize; 3], f64, f64)> {
    let g = w.grid();
    let mut worst: Option<(usize, [usize; 3], f64, f64)> = None;
    for a in 0..g.dim() {
        for ix in g.faces(a) {
            let v = w.component(a)[g.face_index(a, ix)];
            let c = dt * v.abs() / g.spacing()[a];
            if worst.is_none_or(|(_, _, _, wc)| c > wc) {
                worst = Some((a, ix, v, c));
            }
        }
    }
    worst
}

/// One fluid substep of length `dt`:
/// explicit convection `-κ (Y_ε u·∇)u` and buoyancy, projection of that
/// right-hand side, implicit viscosity `(I - dtΔ_vec)u* = rhs`, and a final
/// projection. Returns the new velocity and the pressure accumulated from
/// both projections divided by dt. κ = 0 skips convection and the Yosida
/// solve entirely.
pub fn fluid_substep(
    state: &SimState,
    params: &ModelParams,
    dt: f64,
    solver: &mut PoissonSolver,
) -> Result<(VectorField, ScalarField), FluidError> {
    let g = *state.grid();
    if dt == 0.0 {
        return Ok((state.u.clone(), state.p.clone()));
    }
    let mut rhs = state.u.clone();
    if params.kappa != 0.0 {
        let w = yosida(&state.u, params.epsilon, solver)?;
        if let Some((axis, face, velocity, c)) = worst_face(&w, dt) {
            if c > 1.0 {
                return Err(FluidError::Cfl { axis, face, velocity, dt });
            }
        }
        rhs.axpy(-dt * params.kappa, &convection(&w, &state.u));
    }
    rhs.axpy(dt, &buoyancy_force(params, state));
    rhs.zero_wall_faces();
    let (rhs, q1) = project(&rhs, solver)?;
    let u_star = solver.helmholtz_vector(dt, &rhs);
    let (u, q2) = project(&u_star, solver)?;
    let p: Vec<f64> = q1.values().iter().zip(q2.values()).map(|(a, b)| (a + b) / dt).collect();
    Ok((u, ScalarField::from_values(g, p).with_quantity(Quantity::Pressure)))
}
