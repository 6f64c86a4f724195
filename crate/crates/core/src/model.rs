//! Problem definition: parameters, the chemotactic sensitivity tensor, the
//! boundary cutoff, buoyancy forcing and initial data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{gradient, BcMode, Grid, Quantity, ScalarField, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("alpha must be >= 0, got {0}")]
    Alpha(f64),
    #[error("C_S must be > 0, got {0}")]
    SensitivityConstant(f64),
    #[error("epsilon must be >= 0, got {0}")]
    Epsilon(f64),
    #[error("cutoff margin must lie in [0, 0.5), got {0}")]
    CutoffMargin(f64),
    #[error("final time must be >= 0, got {0}")]
    FinalTime(f64),
    #[error("kappa must be finite, got {0}")]
    Kappa(f64),
    #[error("potential has non-finite values or gradient")]
    Potential,
    #[error("diagonal sensitivity scale {0} must satisfy |s| <= 1")]
    DiagonalScale(f64),
    #[error("rotation axis must be a non-zero finite vector")]
    RotationAxis,
    #[error("sensitivity evaluated at negative density n={n} or concentration c={c}")]
    NegativeArgument { n: f64, c: f64 },
    #[error("initial data preset produces negative {0}")]
    NegativeInitialData(&'static str),
}

/// Concrete families satisfying |S(x, n, c)| ≤ C_S (1 + n)^{-α}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SensitivityKind {
    /// C_S (1+n)^{-α} I.
    ScalarDecay,
    /// C_S (1+n)^{-α} diag(scales), every |scale| ≤ 1.
    DiagonalDecay { scales: [f64; 3] },
    /// C_S (1+n)^{-α} R, R a rotation by `angle` (about `axis` in 3D).
    RotationalDecay { angle: f64, axis: [f64; 3] },
}

impl SensitivityKind {
    pub fn name(&self) -> &'static str {
        match self {
            SensitivityKind::ScalarDecay => "scalar",
            SensitivityKind::DiagonalDecay { .. } => "diagonal",
            SensitivityKind::RotationalDecay { .. } => "rotational",
        }
    }
}

/// Gravitational potential presets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialPreset {
    Zero,
    /// φ = strength · x_last (force along the last axis).
    Gravity {
        strength: f64,
    },
    /// φ = strength · x.
    LinearX {
        strength: f64,
    },
    /// φ = strength · Π cos(π x_a / L_a).
    Cosine {
        strength: f64,
    },
}

impl PotentialPreset {
    pub fn sample(&self, grid: Grid) -> ScalarField {
        let d = grid.dim();
        let l = grid.extent();
        let f = match *self {
            PotentialPreset::Zero => ScalarField::zeros(grid),
            PotentialPreset::Gravity { strength } => ScalarField::from_fn(grid, |x| strength * x[d - 1]),
            PotentialPreset::LinearX { strength } => ScalarField::from_fn(grid, |x| strength * x[0]),
            PotentialPreset::Cosine { strength } => {
                ScalarField::from_fn(grid, |x| strength * (0..d).map(|a| (PI * x[a] / l[a]).cos()).product::<f64>())
            }
        };
        f.with_quantity(Quantity::Potential)
    }
}

/// Model coefficients plus the potential field.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub c_s: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub sensitivity: SensitivityKind,
    pub phi: ScalarField,
    pub run_t: f64,
    pub cutoff_margin: f64,
}

impl ModelParams {
    /// Defaults on `grid`: α = 0.5, C_S = 1, κ = 1, ε = 0, scalar decay, φ = 0.
    pub fn new(grid: Grid) -> Self {
        ModelParams {
            alpha: 0.5,
            c_s: 1.0,
            kappa: 1.0,
            epsilon: 0.0,
            sensitivity: SensitivityKind::ScalarDecay,
            phi: ScalarField::zeros(grid).with_quantity(Quantity::Potential),
            run_t: 1.0,
            cutoff_margin: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::Alpha(self.alpha));
        }
        if !(self.c_s > 0.0 && self.c_s.is_finite()) {
            return Err(ModelError::SensitivityConstant(self.c_s));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::Epsilon(self.epsilon));
        }
        if !(self.cutoff_margin >= 0.0 && self.cutoff_margin < 0.5) {
            return Err(ModelError::CutoffMargin(self.cutoff_margin));
        }
        if !(self.run_t >= 0.0 && self.run_t.is_finite()) {
            return Err(ModelError::FinalTime(self.run_t));
        }
        if !self.kappa.is_finite() {
            return Err(ModelError::Kappa(self.kappa));
        }
        if !self.phi.is_finite() || !gradient(&self.phi).is_finite() {
            return Err(ModelError::Potential);
        }
        match self.sensitivity {
            SensitivityKind::ScalarDecay => {}
            SensitivityKind::DiagonalDecay { scales } => {
                if let Some(&s) = scales.iter().find(|s| !(s.abs() <= 1.0)) {
                    return Err(ModelError::DiagonalScale(s));
                }
            }
            SensitivityKind::RotationalDecay { angle, axis } => {
                let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !angle.is_finite() || !(norm > 0.0 && norm.is_finite()) {
                    return Err(ModelError::RotationAxis);
                }
            }
        }
        Ok(())
    }

    /// The existence theory needs α > 0; α = 0 runs are exploratory.
    pub fn within_theory(&self) -> bool {
        self.alpha > 0.0
    }

    /// Scalar decay factor C_S (1 + n)^{-α}.
    #[inline]
    pub fn decay(&self, n: f64) -> f64 {
        if self.alpha == 0.0 {
            self.c_s
        } else {
            self.c_s * (1.0 + n).powf(-self.alpha)
        }
    }
}

/// One evaluation of S as a dim × dim matrix (unused rows/columns are zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityTensor {
    pub dim: usize,
    pub m: [[f64; 3]; 3],
}

impl SensitivityTensor {
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    /// Spectral norm, from the eigenvalues of SᵀS by cyclic Jacobi sweeps.
    pub fn operator_norm(&self) -> f64 {
        let d = self.dim;
        let mut a = [[0.0f64; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                a[i][j] = (0..d).map(|k| self.m[k][i] * self.m[k][j]).sum();
            }
        }
        for _ in 0..64 {
            let off: f64 = (0..d)
                .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..d).map(|i| a[i][i]).fold(0.0, f64::max).sqrt()
    }
}

fn rotation(dim: usize, angle: f64, axis: [f64; 3]) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    if dim == 2 {
        return [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 0.0]];
    }
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    let [x, y, z] = axis.map(|a| a / norm);
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// S(x, n, c) for the configured family. The families used here do not
/// depend on `x` or `c`; both stay in the signature of the model.
pub fn eval_sensitivity(params: &ModelParams, _x: [f64; 3], n: f64, c: f64) -> Result<SensitivityTensor, ModelError> {
    if n < 0.0 || c < 0.0 || n.is_nan() || c.is_nan() {
        return Err(ModelError::NegativeArgument { n, c });
    }
    Ok(sensitivity_unchecked(params, n))
}

fn sensitivity_unchecked(params: &ModelParams, n: f64) -> SensitivityTensor {
    let dim = params.grid().dim();
    let s = params.decay(n);
    let mut m = [[0.0; 3]; 3];
    match params.sensitivity {
        SensitivityKind::ScalarDecay => {
            for (i, row) in m.iter_mut().enumerate().take(dim) {
                row[i] = s;
            }
        }
        SensitivityKind::DiagonalDecay { scales } => {
            for (i, row) in m.iter_mut().enumerate().take(dim) {
                row[i] = s * scales[i];
            }
        }
        SensitivityKind::RotationalDecay { angle, axis } => {
            let r = rotation(dim, angle, axis);
            for i in 0..dim {
                for j in 0..dim {
                    m[i][j] = s * r[i][j];
                }
            }
        }
    }
    SensitivityTensor { dim, m }
}

/// Boundary-layer width of the cutoff for the current ε.
pub fn cutoff_width(params: &ModelParams) -> f64 {
    let g = params.grid();
    if g.bc() == BcMode::Periodic {
        return 0.0;
    }
    let half_min = 0.5 * g.extent()[..g.dim()].iter().cloned().fold(f64::INFINITY, f64::min);
    (params.cutoff_margin * params.epsilon * g.diameter()).min(half_min)
}

/// ρ_ε(x): 1 farther than the cutoff width from the walls, smoothstep down to
/// 0 on the walls; identically 1 without walls or without a width.
pub fn cutoff_rho(params: &ModelParams, x: [f64; 3]) -> f64 {
    let w = cutoff_width(params);
    if w <= 0.0 {
        return 1.0;
    }
    let g = params.grid();
    let l = g.extent();
    let d = (0..g.dim()).map(|a| x[a].min(l[a] - x[a])).fold(f64::INFINITY, f64::min).max(0.0);
    if d >= w {
        1.0
    } else {
        let s = d / w;
        s * s * (3.0 - 2.0 * s)
    }
}

/// Full gradient of `c` reconstructed at a face normal to `axis`: the normal
/// part is the face difference, tangential parts average the four
/// surrounding tangential face differences.
pub(crate) fn face_gradient(grad: &VectorField, axis: usize, ix: [usize; 3]) -> [f64; 3] {
    let g = grad.grid();
    let mut out = [0.0; 3];
    out[axis] = grad.component(axis)[g.face_index(axis, ix)];
    let (lo, hi) = g.face_cells(axis, ix);
    for b in (0..g.dim()).filter(|&b| b != axis) {
        let comp = grad.component(b);
        let mut acc = 0.0;
        let mut count = 0.0;
        for cell in [lo, hi].into_iter().flatten() {
            let (f0, f1) = g.cell_faces(b, cell);
            acc += comp[f0] + comp[f1];
            count += 2.0;
        }
        if count > 0.0 {
            out[b] = acc / count;
        }
    }
    out
}

/// Face-normal component of ρ_ε S(x, n_f, c_f) ∇c at every face, with `n`
/// and `c` averaged to faces. Multiplying by the transported density
/// n/(1+εn) gives the chemotactic flux. Wall faces are zero.
pub fn chemotactic_velocity(params: &ModelParams, n: &ScalarField, c: &ScalarField) -> VectorField {
    let g = *n.grid();
    let grad_c = gradient(c);
    let needs_tangential = matches!(params.sensitivity, SensitivityKind::RotationalDecay { .. });
    let mut comps = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let n_face = n.face_average(a);
        let mut out = vec![0.0; g.n_faces(a)];
        for ix in g.faces(a) {
            if g.is_wall_face(a, ix) {
                continue;
            }
            let i = g.face_index(a, ix);
            let rho = cutoff_rho(params, g.face_center(a, ix));
            if rho == 0.0 {
                continue;
            }
            let s = sensitivity_unchecked(params, n_face[i].max(0.0));
            let v = if needs_tangential {
                let gc = face_gradient(&grad_c, a, ix);
                s.apply(gc)[a]
            } else {
                s.m[a][a] * grad_c.component(a)[i]
            };
            out[i] = rho * v;
        }
        comps.push(out);
    }
    VectorField::from_components(g, comps)
}

/// n/(1+εn).
#[inline]
pub fn saturated_density(n: f64, epsilon: f64) -> f64 {
    n / (1.0 + epsilon * n)
}

/// Face flux [n/(1+εn)] ρ_ε S ∇c with arithmetic face averages of n and c.
/// Wall-normal components vanish (no-flux condition).
pub fn regularized_flux(params: &ModelParams, state: &SimState) -> VectorField {
    let mut v = chemotactic_velocity(params, &state.n, &state.c);
    let g = *state.n.grid();
    for a in 0..g.dim() {
        let n_face = state.n.face_average(a);
        for (f, nf) in v.component_mut(a).iter_mut().zip(n_face) {
            *f *= saturated_density(nf, params.epsilon);
        }
    }
    v
}

/// (n + m) ∇φ on faces with face-averaged n + m.
pub fn buoyancy_force(params: &ModelParams, state: &SimState) -> VectorField {
    let g = *state.n.grid();
    let mut total = state.n.clone();
    for (t, m) in total.values_mut().iter_mut().zip(state.m.values()) {
        *t += m;
    }
    let mut force = gradient(&params.phi);
    for a in 0..g.dim() {
        let w = total.face_average(a);
        for (f, wf) in force.component_mut(a).iter_mut().zip(w) {
            *f *= wf;
        }
    }
    force
}

/// Discrete fields at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub m: ScalarField,
    pub u: VectorField,
    pub p: ScalarField,
}

impl SimState {
    pub fn zeros(grid: Grid) -> Self {
        SimState {
            t: 0.0,
            n: ScalarField::zeros(grid).with_quantity(Quantity::Density),
            c: ScalarField::zeros(grid).with_quantity(Quantity::Concentration),
            m: ScalarField::zeros(grid).with_quantity(Quantity::Density),
            u: VectorField::zeros(grid),
            p: ScalarField::zeros(grid).with_quantity(Quantity::Pressure),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }

    /// First non-finite field, if any.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        if !self.n.is_finite() {
            Some("n")
        } else if !self.c.is_finite() {
            Some("c")
        } else if !self.m.is_finite() {
            Some("m")
        } else if !self.u.is_finite() {
            Some("u")
        } else if !self.p.is_finite() {
            Some("p")
        } else {
            None
        }
    }
}

/// Initial data generators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    /// Spatially uniform n, m, c and u = 0.
    HomogeneousPair { n0: f64, m0: f64, c0: f64 },
    /// Fixed Gaussian clusters of sperm and eggs over a positive floor with a gentle vortex.
    GaussianBlobs,
    /// Random low-mode positive data and a random solenoidal velocity.
    RandomSmooth { seed: u64 },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::HomogeneousPair { .. } => "homogeneous",
            Preset::GaussianBlobs => "gaussian_blobs",
            Preset::RandomSmooth { .. } => "random_smooth",
        }
    }
}

/// Staggered velocity from a vector potential A (only A_z = ψ matters in
/// 2D). The discrete curl has zero discrete divergence; in box mode the
/// potential must vanish on the walls, which zeros wall-normal faces.
pub fn curl_velocity(grid: Grid, potential: impl Fn(usize, [f64; 3]) -> f64) -> VectorField {
    let d = grid.dim();
    let h = grid.spacing();
    let mut u = VectorField::from_fn(grid, |a, x| {
        let mut v = 0.0;
        for b in 0..3 {
            if b == a || b >= d {
                continue;
            }
            let c = 3 - a - b;
            if d == 2 && c != 2 {
                continue;
            }
            // Levi-Civita sign of (a, b, c)
            let sign = if (a + 1) % 3 == b { 1.0 } else { -1.0 };
            let mut xp = x;
            let mut xm = x;
            xp[b] += 0.5 * h[b];
            xm[b] -= 0.5 * h[b];
            v += sign * (potential(c, xp) - potential(c, xm)) / h[b];
        }
        v
    });
    u.zero_wall_faces();
    u
}

fn gaussian(x: [f64; 3], center: [f64; 3], sigma: f64, dim: usize) -> f64 {
    let r2: f64 = (0..dim).map(|a| (x[a] - center[a]).powi(2)).sum();
    (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Builds the initial state for a preset. Data are sampled pointwise, so the
/// same preset on a refined grid is a refinement of the same functions.
pub fn make_initial_state(grid: Grid, preset: Preset) -> Result<SimState, ModelError> {
    let d = grid.dim();
    let l = grid.extent();
    let periodic = grid.is_periodic();
    let mut state = SimState::zeros(grid);
    match preset {
        Preset::HomogeneousPair { n0, m0, c0 } => {
            for (v, name) in [(n0, "n"), (m0, "m"), (c0, "c")] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ModelError::NegativeInitialData(name));
                }
            }
            state.n = ScalarField::constant(grid, n0).with_quantity(Quantity::Density);
            state.m = ScalarField::constant(grid, m0).with_quantity(Quantity::Density);
            state.c = ScalarField::constant(grid, c0).with_quantity(Quantity::Concentration);
        }
        Preset::GaussianBlobs => {
            let at = |f: [f64; 3]| {
                let mut p = [0.0; 3];
                for a in 0..d {
                    p[a] = f[a] * l[a];
                }
                p
            };
            let sigma = 0.1 * l[..d].iter().cloned().fold(f64::INFINITY, f64::min);
            let n_centers = [at([0.3, 0.35, 0.4]), at([0.7, 0.6, 0.55])];
            let m_center = at([0.5, 0.68, 0.5]);
            state.n = ScalarField::from_fn(grid, |x| {
                0.2 + 4.0 * n_centers.iter().map(|&c0| gaussian(x, c0, sigma, d)).sum::<f64>()
            })
            .with_quantity(Quantity::Density);
            state.m = ScalarField::from_fn(grid, |x| 0.2 + 3.0 * gaussian(x, m_center, 1.5 * sigma, d))
                .with_quantity(Quantity::Density);
            state.c = ScalarField::from_fn(grid, |x| gaussian(x, m_center, 2.0 * sigma, d))
                .with_quantity(Quantity::Concentration);
            state.u = curl_velocity(grid, |comp, x| {
                let s = |a: usize| {
                    if periodic {
                        (2.0 * PI * x[a] / l[a]).sin()
                    } else {
                        (PI * x[a] / l[a]).sin().powi(2)
                    }
                };
                match (d, comp) {
                    (2, 2) => 0.05 * s(0) * s(1),
                    (3, 2) => 0.05 * s(0) * s(1) * s(2),
                    (3, 0) => 0.03 * s(0) * s(1) * s(2),
                    _ => 0.0,
                }
            });
        }
        Preset::RandomSmooth { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut modes = |count: usize, amplitude: f64| -> Vec<([f64; 3], f64, f64)> {
                (0..count)
                    .map(|_| {
                        let mut k = [0.0; 3];
                        for ka in k.iter_mut().take(d) {
                            *ka = rng.gen_range(0..=3) as f64;
                        }
                        let coeff = rng.gen_range(-1.0..1.0) * amplitude / count as f64;
                        let phase = if periodic { rng.gen_range(0.0..2.0 * PI) } else { 0.0 };
                        (k, coeff, phase)
                    })
                    .collect()
            };
            let mode_value = |x: [f64; 3], k: [f64; 3], phase: f64| -> f64 {
                if periodic {
                    let arg: f64 = (0..d).map(|a| 2.0 * PI * k[a] * x[a] / l[a]).sum();
                    (arg + phase).cos()
                } else {
                    (0..d).map(|a| (PI * k[a] * x[a] / l[a]).cos()).product()
                }
            };
            let field = |base: f64, modes: &[([f64; 3], f64, f64)]| {
                ScalarField::from_fn(grid, move |x| {
                    base + modes.iter().map(|&(k, a, ph)| a * mode_value(x, k, ph)).sum::<f64>()
                })
            };
            let n_modes = modes(6, 0.8);
            let m_modes = modes(6, 0.8);
            let c_modes = modes(6, 0.4);
            let psi_modes: Vec<([f64; 3], f64)> = (0..4)
                .map(|_| {
                    let mut k = [1.0; 3];
                    for ka in k.iter_mut().take(d) {
                        *ka = rng.gen_range(1..=2) as f64;
                    }
                    (k, rng.gen_range(-0.08..0.08))
                })
                .collect();
            state.n = field(1.0, &n_modes).with_quantity(Quantity::Density);
            state.m = field(1.0, &m_modes).with_quantity(Quantity::Density);
            state.c = field(0.5, &c_modes).with_quantity(Quantity::Concentration);
            state.u = curl_velocity(grid, |comp, x| {
                if comp != 2 && !(d == 3 && comp == 0) {
                    return 0.0;
                }
                psi_modes
                    .iter()
                    .map(|&(k, a)| {
                        a * (0..d)
                            .map(|ax| {
                                if periodic {
                                    (2.0 * PI * k[ax] * x[ax] / l[ax] + comp as f64).sin()
                                } else {
                                    (PI * k[ax] * x[ax] / l[ax]).sin()
                                }
                            })
                            .product::<f64>()
                    })
                    .sum()
            });
        }
    }
    for (f, name) in [(&state.n, "n"), (&state.c, "c"), (&state.m, "m")] {
        if f.min() < 0.0 || !f.is_finite() {
            return Err(ModelError::NegativeInitialData(name));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{divergence, make_grid};

    fn grid2(bc: BcMode) -> Grid {
        make_grid(2, &[8, 8], &[1.0, 1.0], bc).unwrap()
    }

    #[test]
    fn scalar_decay_values() {
        let mut p = ModelParams::new(grid2(BcMode::Box));
        p.alpha = 0.0;
        p.c_s = 1.7;
        let s = eval_sensitivity(&p, [0.1; 3], 123.0, 0.5).unwrap();
        assert_eq!(s.m[0], [1.7, 0.0, 0.0]);
        assert_eq!(s.m[1], [0.0, 1.7, 0.0]);
        p.alpha = 1.0;
        p.c_s = 2.0;
        let s = eval_sensitivity(&p, [0.1; 3], 1.0, 0.0).unwrap();
        assert_eq!(s.m[0][0], 1.0);
        assert_eq!(s.m[1][1], 1.0);
        assert_eq!(s.m[0][1], 0.0);
    }

    #[test]
    fn rotation_quarter_turn() {
        let mut p = ModelParams::new(grid2(BcMode::Box));
        p.c_s = 3.0;
        p.sensitivity = SensitivityKind::RotationalDecay { angle: PI / 2.0, axis: [0.0, 0.0, 1.0] };
        let s = eval_sensitivity(&p, [0.0; 3], 0.0, 0.0).unwrap();
        let expected = [[0.0, -3.0], [3.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.m[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
        assert!((s.operator_norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_negative_arguments() {
        let p = ModelParams::new(grid2(BcMode::Box));
        assert!(matches!(eval_sensitivity(&p, [0.0; 3], -1.0, 0.0), Err(ModelError::NegativeArgument { .. })));
        assert!(matches!(eval_sensitivity(&p, [0.0; 3], 1.0, -0.1), Err(ModelError::NegativeArgument { .. })));
    }

    #[test]
    fn validation_catches_bad_params() {
        let g = grid2(BcMode::Box);
        let mut p = ModelParams::new(g);
        assert!(p.validate().is_ok());
        p.c_s = 0.0;
        assert_eq!(p.validate(), Err(ModelError::SensitivityConstant(0.0)));
        let mut p = ModelParams::new(g);
        p.sensitivity = SensitivityKind::DiagonalDecay { scales: [1.0, 1.5, 0.0] };
        assert_eq!(p.validate(), Err(ModelError::DiagonalScale(1.5)));
        let mut p = ModelParams::new(g);
        p.cutoff_margin = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn cutoff_limits() {
        let mut p = ModelParams::new(grid2(BcMode::Box));
        p.epsilon = 0.0;
        p.cutoff_margin = 0.3;
        assert_eq!(cutoff_rho(&p, [0.0, 0.5, 0.0]), 1.0);
        let mut q = ModelParams::new(grid2(BcMode::Periodic));
        q.epsilon = 0.5;
        q.cutoff_margin = 0.3;
        assert_eq!(cutoff_rho(&q, [0.0, 0.0, 0.0]), 1.0);
        p.epsilon = 0.5;
        assert_eq!(cutoff_rho(&p, [0.0, 0.5, 0.0]), 0.0);
        let near = [0.05, 0.5, 0.0];
        let rho_half = cutoff_rho(&p, near);
        p.epsilon = 0.25;
        let rho_quarter = cutoff_rho(&p, near);
        // width = 0.3 ε √2: 0.212 and 0.106, distance 0.05
        let bump = |w: f64| {
            let s: f64 = 0.05 / w;
            s * s * (3.0 - 2.0 * s)
        };
        assert!((rho_half - bump(0.3 * 0.5 * 2f64.sqrt())).abs() < 1e-14);
        assert!((rho_quarter - bump(0.3 * 0.25 * 2f64.sqrt())).abs() < 1e-14);
        assert!(rho_half <= rho_quarter);
    }

    #[test]
    fn flux_zero_cases() {
        let g = grid2(BcMode::Box);
        let p = ModelParams::new(g);
        let mut s = make_initial_state(g, Preset::GaussianBlobs).unwrap();
        s.c = ScalarField::constant(g, 2.0);
        assert_eq!(regularized_flux(&p, &s).max_abs(), 0.0);
        let mut s = make_initial_state(g, Preset::GaussianBlobs).unwrap();
        s.n = ScalarField::zeros(g);
        assert_eq!(regularized_flux(&p, &s).max_abs(), 0.0);
    }

    #[test]
    fn flux_hand_stencil_1d_profile() {
        let g = make_grid(2, &[8, 4], &[1.0, 0.5], BcMode::Box).unwrap();
        let mut p = ModelParams::new(g);
        p.alpha = 0.0;
        p.c_s = 1.5;
        p.epsilon = 0.0;
        let mut s = SimState::zeros(g);
        let nv = [1.0, 2.0, 0.5, 3.0, 4.0, 0.0, 1.0, 2.5];
        let cv = [0.0, 0.1, 0.4, 0.9, 1.6, 2.5, 3.6, 4.9];
        s.n = ScalarField::from_fn(g, |x| nv[(x[0] * 8.0) as usize]);
        s.c = ScalarField::from_fn(g, |x| cv[(x[0] * 8.0) as usize]);
        let f = regularized_flux(&p, &s);
        let h = 0.125;
        for ix in g.faces(0) {
            let i = ix[0];
            let expected =
                if i == 0 || i == 8 { 0.0 } else { 1.5 * 0.5 * (nv[i - 1] + nv[i]) * (cv[i] - cv[i - 1]) / h };
            assert!((f.component(0)[g.face_index(0, ix)] - expected).abs() < 1e-12);
        }
        assert_eq!(f.component(1).iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn buoyancy_unit_force() {
        let g = grid2(BcMode::Periodic);
        let mut p = ModelParams::new(g);
        p.phi = ScalarField::constant(g, 3.0);
        let mut s = SimState::zeros(g);
        s.n = ScalarField::constant(g, 0.25);
        s.m = ScalarField::constant(g, 0.75);
        assert_eq!(buoyancy_force(&p, &s).max_abs(), 0.0);
        let b = grid2(BcMode::Box);
        let mut p = ModelParams::new(b);
        p.phi = ScalarField::from_fn(b, |x| x[0]);
        let mut s = SimState::zeros(b);
        s.n = ScalarField::constant(b, 0.25);
        s.m = ScalarField::constant(b, 0.75);
        let f = buoyancy_force(&p, &s);
        for ix in b.faces(0) {
            let v = f.component(0)[b.face_index(0, ix)];
            if b.is_wall_face(0, ix) {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        assert!(f.component(1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn buoyancy_hand_stencil_3d() {
        let g = make_grid(3, &[4, 4, 4], &[1.0, 1.0, 1.0], BcMode::Box).unwrap();
        let mut p = ModelParams::new(g);
        p.phi = ScalarField::from_fn(g, |x| x[0] * x[1] + x[2] * x[2]);
        let mut s = SimState::zeros(g);
        s.n = ScalarField::from_fn(g, |x| 1.0 + x[0]);
        s.m = ScalarField::from_fn(g, |x| x[1] * x[2]);
        let f = buoyancy_force(&p, &s);
        let h = 0.25;
        for a in 0..3 {
            for ix in g.faces(a) {
                let v = f.component(a)[g.face_index(a, ix)];
                if ix[a] == 0 || ix[a] == 4 {
                    assert_eq!(v, 0.0);
                    continue;
                }
                let mut lo = ix;
                lo[a] -= 1;
                let w = |c: [usize; 3]| s.n.at(c) + s.m.at(c);
                let expected = 0.5 * (w(lo) + w(ix)) * (p.phi.at(ix) - p.phi.at(lo)) / h;
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_presets() {
        for bc in [BcMode::Box, BcMode::Periodic] {
            let g = make_grid(2, &[16, 16], &[1.0, 1.0], bc).unwrap();
            let s = make_initial_state(g, Preset::HomogeneousPair { n0: 1.0, m0: 1.0, c0: 0.0 }).unwrap();
            assert!(s.n.values().iter().all(|&v| v == 1.0));
            assert!(s.c.values().iter().all(|&v| v == 0.0));
            assert_eq!(s.u.max_abs(), 0.0);
            let s = make_initial_state(g, Preset::GaussianBlobs).unwrap();
            assert!(s.n.min() >= 0.0 && s.m.min() >= 0.0 && s.c.min() >= 0.0);
            assert!(divergence(&s.u).max_abs() < 1e-12);
            let a = make_initial_state(g, Preset::RandomSmooth { seed: 7 }).unwrap();
            let b = make_initial_state(g, Preset::RandomSmooth { seed: 7 }).unwrap();
            assert_eq!(a, b);
            for (x, y) in a.n.values().iter().zip(b.n.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert!(divergence(&a.u).max_abs() < 1e-12);
            assert!(a.u.max_abs() > 0.0);
        }
        let g = make_grid(3, &[8, 8, 8], &[1.0, 1.0, 1.0], BcMode::Box).unwrap();
        let s = make_initial_state(g, Preset::RandomSmooth { seed: 3 }).unwrap();
        assert!(divergence(&s.u).max_abs() < 1e-12);
        assert!(matches!(
            make_initial_state(g, Preset::HomogeneousPair { n0: -1.0, m0: 1.0, c0: 0.0 }),
            Err(ModelError::NegativeInitialData("n"))
        ));
    }
}
