//! Monitored functionals: masses, sup norms, energy or entropy, and the
//! running space-time dissipation ledgers.

use thiserror::Error;

use crate::grid::{
    cell_dot, divergence, face_dot, gradient, integrate, laplacian, vector_laplacian, ScalarField, VectorField,
};
use crate::model::{ModelParams, SimState};

/// |α - 1/12| below this selects the entropy functional.
pub const ENTROPY_ALPHA_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentSet {
    pub alpha: f64,
    pub p: f64,
    pub gamma0: f64,
    pub r_flux: f64,
    pub r_nu: f64,
    pub r_bulk: f64,
}

impl ExponentSet {
    /// True when the energy uses ∫ n ln n instead of ∫ nᵖ / p.
    pub fn entropy_branch(&self) -> bool {
        (self.alpha - 1.0 / 12.0).abs() <= ENTROPY_ALPHA_TOL
    }

    /// 2p - 4α, which equals `r_bulk`.
    pub fn gn_target(&self) -> f64 {
        2.0 * self.p - 4.0 * self.alpha
    }
}

pub fn exponents(alpha: f64) -> ExponentSet {
    ExponentSet {
        alpha,
        p: 4.0 * alpha + 2.0 / 3.0,
        gamma0: (3.0 * alpha + 1.0).min(2.0),
        r_flux: (12.0 * alpha + 4.0) / (3.0 * alpha + 4.0),
        r_nu: (2.0 + 6.0 * alpha) / (2.0 + 3.0 * alpha),
        r_bulk: (12.0 * alpha + 4.0) / 3.0,
    }
}

/// Weights of the gradient and kinetic parts of the energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyCoeffs {
    pub a: f64,
    pub b: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        EnergyCoeffs { a: 1.0, b: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    pub mass_n: f64,
    pub mass_m: f64,
    pub mass_c: f64,
    /// Not part of the CSV schema.
    pub sup_n: f64,
    pub sup_m: f64,
    pub sup_c: f64,
    pub grad_c_l2sq: f64,
    pub u_l2sq: f64,
    pub n_lp: f64,
    pub entropy_n: f64,
    pub energy: f64,
    pub div_u_max: f64,
}

/// ∫ n ln n with 0 ln 0 = 0.
pub fn entropy_functional(n: &ScalarField) -> f64 {
    let s: f64 = n.values().iter().map(|&v| if v == 0.0 { 0.0 } else { v * v.max(1e-300).ln() }).sum();
    s * n.grid().cell_volume()
}

fn power_integral(n: &ScalarField, p: f64) -> f64 {
    let s: f64 = n.values().iter().map(|&v| if v <= 0.0 { 0.0 } else { v.powf(p) }).sum();
    s * n.grid().cell_volume()
}

/// (1/p)∫nᵖ + a∫|∇c|² + b∫|u|², or ∫ n ln n + a∫|∇c|² + b∫|u|² on the
/// entropy branch.
pub fn energy_functional(state: &SimState, params: &ModelParams, coeffs: EnergyCoeffs) -> f64 {
    let ex = exponents(params.alpha);
    let gc = gradient(&state.c);
    let bulk = if ex.entropy_branch() { entropy_functional(&state.n) } else { power_integral(&state.n, ex.p) / ex.p };
    bulk + coeffs.a * face_dot(&gc, &gc) + coeffs.b * face_dot(&state.u, &state.u)
}

/// All instantaneous functionals; `dt` is left at 0 for the caller to fill.
pub fn record(state: &SimState, params: &ModelParams, coeffs: EnergyCoeffs) -> DiagnosticsRecord {
    let ex = exponents(params.alpha);
    let gc = gradient(&state.c);
    let grad_c_l2sq = face_dot(&gc, &gc);
    let u_l2sq = face_dot(&state.u, &state.u);
    let entropy_n = entropy_functional(&state.n);
    let n_lp = power_integral(&state.n, ex.p);
    let bulk = if ex.entropy_branch() { entropy_n } else { n_lp / ex.p };
    DiagnosticsRecord {
        t: state.t,
        dt: 0.0,
        mass_n: integrate(&state.n),
        mass_m: integrate(&state.m),
        mass_c: integrate(&state.c),
        sup_n: state.n.max_abs(),
        sup_m: state.m.max_abs(),
        sup_c: state.c.max_abs(),
        grad_c_l2sq,
        u_l2sq,
        n_lp,
        entropy_n,
        energy: bulk + coeffs.a * grad_c_l2sq + coeffs.b * u_l2sq,
        div_u_max: divergence(&state.u).max_abs(),
    }
}

/// Running time integrals of the dissipation (D) and bulk (B) terms.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DissipationLedger {
    /// ∫∫|∇u|²
    pub d1: f64,
    /// ∫∫|∇c|⁴
    pub d2: f64,
    /// ∫‖∇n^{p/2}‖²
    pub d3: f64,
    /// ∫∫|Δc|²
    pub d4: f64,
    /// ∫∫|∇m|²
    pub d5: f64,
    /// ∫∫n^{r_bulk}
    pub b1: f64,
    /// ∫∫|∇n|^{γ₀}
    pub b2: f64,
    /// ∫∫|n u|^{r_nu}
    pub b3: f64,
}

pub const LEDGER_NAMES: [&str; 8] = ["D1", "D2", "D3", "D4", "D5", "B1", "B2", "B3"];

impl DissipationLedger {
    pub fn as_array(&self) -> [f64; 8] {
        [self.d1, self.d2, self.d3, self.d4, self.d5, self.b1, self.b2, self.b3]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        DissipationLedger { d1: v[0], d2: v[1], d3: v[2], d4: v[3], d5: v[4], b1: v[5], b2: v[6], b3: v[7] }
    }
}

/// Cell-averaged gradient magnitude of a face field, per cell.
fn cell_magnitudes(v: &VectorField) -> Vec<f64> {
    v.cell_centered().iter().map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()).collect()
}

/// Spatial integrands of the eight ledger entries at one state.
pub fn ledger_integrands(state: &SimState, params: &ModelParams) -> [f64; 8] {
    let g = *state.grid();
    let vol = g.cell_volume();
    let ex = exponents(params.alpha);
    let d1 = -face_dot(&state.u, &vector_laplacian(&state.u));
    let gc = gradient(&state.c);
    let d2 = cell_magnitudes(&gc).iter().map(|m| m.powi(4)).sum::<f64>() * vol;
    let half = state.n.map(|v| if v <= 0.0 { 0.0 } else { v.powf(0.5 * ex.p) });
    let gh = gradient(&half);
    let d3 = face_dot(&gh, &gh);
    let lc = laplacian(&state.c);
    let d4 = cell_dot(&lc, &lc);
    let gm = gradient(&state.m);
    let d5 = face_dot(&gm, &gm);
    let b1 = power_integral(&state.n, ex.r_bulk);
    let gn = gradient(&state.n);
    let b2 = cell_magnitudes(&gn).iter().map(|m| m.powf(ex.gamma0)).sum::<f64>() * vol;
    let uc = state.u.cell_centered();
    let b3 = state
        .n
        .values()
        .iter()
        .zip(&uc)
        .map(|(&n, u)| {
            let m = n.abs() * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            m.powf(ex.r_nu)
        })
        .sum::<f64>()
        * vol;
    [d1, d2, d3, d4, d5, b1, b2, b3].map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Right-endpoint rectangle rule: adds `dt` times the integrands at `next`.
pub fn update_ledger(ledger: &DissipationLedger, next: &SimState, params: &ModelParams, dt: f64) -> DissipationLedger {
    let inc = ledger_integrands(next, params);
    let mut v = ledger.as_array();
    for (x, i) in v.iter_mut().zip(inc) {
        *x += dt * i;
    }
    DissipationLedger::from_array(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest excess of a checked point over the fitted line.
    pub max_violation: f64,
    /// Fitted line at the last abscissa.
    pub envelope_at_end: f64,
}

impl EnvelopeFit {
    /// Violation within `rel` of the fitted envelope at the final time.
    pub fn passes(&self, rel: f64) -> bool {
        self.max_violation <= rel * self.envelope_at_end.abs() + 1e-14
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("envelope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("abscissae must be strictly increasing")]
    NotIncreasing,
}

/// Affine growth check. The line is fitted by least squares to the leading
/// half of the series and the remaining points are tested against its
/// extrapolation: linear and sublinear growth stay below it, superlinear
/// growth rises above it.
pub fn envelope_fit(series: &[(f64, f64)]) -> Result<EnvelopeFit, DiagnosticsError> {
    let n = series.len();
    if n < 3 {
        return Err(DiagnosticsError::TooFewPoints(n));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(DiagnosticsError::NotIncreasing);
    }
    let k = n.div_ceil(2).max(2);
    let lead = &series[..k];
    let kf = k as f64;
    let mx = lead.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = lead.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = lead.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = lead.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let line = |t: f64| intercept + slope * t;
    let max_violation = series[k..].iter().map(|&(t, v)| v - line(t)).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    Ok(EnvelopeFit { slope, intercept, max_violation, envelope_at_end: line(series[n - 1].0) })
}
