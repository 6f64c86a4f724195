//! Direct solvers for `(a I - b Δ) x = f` on the uniform grid.
//!
//! Every boundary treatment used here makes the discrete Laplacian separable
//! with a known orthonormal eigenbasis per axis (cosine, sine or real Fourier
//! vectors). Solving is a forward transform along each axis, a division by the
//! eigenvalue sum and the inverse transform. Lines are at most a few hundred
//! entries long at desk scale, so the transforms are dense matrix products.

use std::f64::consts::PI;

/// Boundary treatment of one axis for the unknowns being transformed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineKind {
    /// Cell-centred values, mirror ghosts (homogeneous Neumann).
    CellNeumann,
    /// Cell-centred values, odd ghosts (zero at the wall, between ghost and cell).
    CellWall,
    /// Interior nodes of a line whose end nodes are held at zero.
    NodeDirichlet,
    /// Wrapped values.
    Periodic,
}

/// Orthonormal eigenbasis of `-δ²` on one line.
#[derive(Clone, Debug)]
pub struct LineBasis {
    len: usize,
    /// Row `k` holds eigenvector `k`.
    vectors: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl LineBasis {
    /// Basis for a line of `cells` cells of width `h`.
    pub fn new(kind: LineKind, cells: usize, h: f64) -> Self {
        let n = cells;
        let nf = n as f64;
        let sin2 = |x: f64| {
            let s = x.sin();
            s * s
        };
        let scale = 4.0 / (h * h);
        let (len, vectors, eigenvalues) = match kind {
            LineKind::CellNeumann => {
                let mut v = vec![0.0; n * n];
                let mut lam = vec![0.0; n];
                for k in 0..n {
                    let w = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    for i in 0..n {
                        v[k * n + i] = w * (PI * k as f64 * (i as f64 + 0.5) / nf).cos();
                    }
                    lam[k] = scale * sin2(PI * k as f64 / (2.0 * nf));
                }
                (n, v, lam)
            }
            LineKind::CellWall => {
                let mut v = vec![0.0; n * n];
                let mut lam = vec![0.0; n];
                for r in 0..n {
                    let k = r + 1;
                    let w = if k == n { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    for i in 0..n {
                        v[r * n + i] = w * (PI * k as f64 * (i as f64 + 0.5) / nf).sin();
                    }
                    lam[r] = scale * sin2(PI * k as f64 / (2.0 * nf));
                }
                (n, v, lam)
            }
            LineKind::NodeDirichlet => {
                let m = n - 1;
                let mut v = vec![0.0; m * m];
                let mut lam = vec![0.0; m];
                let w = (2.0 / nf).sqrt();
                for r in 0..m {
                    let k = r + 1;
                    for i in 0..m {
                        v[r * m + i] = w * (PI * k as f64 * (i + 1) as f64 / nf).sin();
                    }
                    lam[r] = scale * sin2(PI * k as f64 / (2.0 * nf));
                }
                (m, v, lam)
            }
            LineKind::Periodic => {
                let mut v = vec![0.0; n * n];
                let mut lam = vec![0.0; n];
                let w0 = (1.0 / nf).sqrt();
                let w = (2.0 / nf).sqrt();
                for i in 0..n {
                    v[i] = w0;
                }
                let mut r = 1;
                let mut k = 1;
                while 2 * k < n {
                    for i in 0..n {
                        let th = 2.0 * PI * (k * i) as f64 / nf;
                        v[r * n + i] = w * th.cos();
                        v[(r + 1) * n + i] = w * th.sin();
                    }
                    let l = scale * sin2(PI * k as f64 / nf);
                    lam[r] = l;
                    lam[r + 1] = l;
                    r += 2;
                    k += 1;
                }
                if n % 2 == 0 {
                    for i in 0..n {
                        v[r * n + i] = if i % 2 == 0 { w0 } else { -w0 };
                    }
                    lam[r] = scale;
                }
                (n, v, lam)
            }
        };
        LineBasis { len, vectors, eigenvalues }
    }

    fn trivial() -> Self {
        LineBasis { len: 1, vectors: vec![1.0], eigenvalues: vec![0.0] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

/// Tensor-product eigenbasis over up to three axes.
#[derive(Clone, Debug)]
pub struct SeparableSolver {
    shape: [usize; 3],
    bases: [LineBasis; 3],
    starts: [Vec<usize>; 3],
    line: Vec<f64>,
    out: Vec<f64>,
}

impl SeparableSolver {
    /// `axes[a] = Some((kind, cells, h))` for active axes.
    pub fn new(axes: [Option<(LineKind, usize, f64)>; 3]) -> Self {
        let bases = axes.map(|ax| match ax {
            Some((kind, n, h)) => LineBasis::new(kind, n, h),
            None => LineBasis::trivial(),
        });
        let shape = [bases[0].len(), bases[1].len(), bases[2].len()];
        let longest = *shape.iter().max().unwrap_or(&1);
        let s = shape;
        let starts = [0, 1, 2].map(|axis| {
            (0..s[0])
                .flat_map(|i| (0..s[1]).flat_map(move |j| (0..s[2]).map(move |k| (i, j, k))))
                .filter(|&(i, j, k)| [i, j, k][axis] == 0)
                .map(|(i, j, k)| (i * s[1] + j) * s[2] + k)
                .collect()
        });
        SeparableSolver { shape, bases, starts, line: vec![0.0; longest], out: vec![0.0; longest] }
    }

    /// Shape of the unknown array this solver acts on.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn transform(&mut self, data: &mut [f64], axis: usize, forward: bool) {
        let s = self.shape;
        let m = s[axis];
        if m == 1 {
            return;
        }
        let stride = match axis {
            0 => s[1] * s[2],
            1 => s[2],
            _ => 1,
        };
        let basis = &self.bases[axis];
        for &start in &self.starts[axis] {
            for p in 0..m {
                self.line[p] = data[start + p * stride];
            }
            if forward {
                for k in 0..m {
                    let row = &basis.vectors[k * m..(k + 1) * m];
                    self.out[k] = row.iter().zip(&self.line[..m]).map(|(a, b)| a * b).sum();
                }
            } else {
                for o in self.out[..m].iter_mut() {
                    *o = 0.0;
                }
                for k in 0..m {
                    let c = self.line[k];
                    let row = &basis.vectors[k * m..(k + 1) * m];
                    for (o, r) in self.out[..m].iter_mut().zip(row) {
                        *o += c * r;
                    }
                }
            }
            for p in 0..m {
                data[start + p * stride] = self.out[p];
            }
        }
    }

    /// Solves `(a I - b Δ) x = f` in place. Modes whose total coefficient
    /// vanishes (the constant mode of a pure Neumann or periodic Poisson
    /// problem) are set to zero, which picks the zero-mean solution.
    pub fn solve(&mut self, a: f64, b: f64, data: &mut [f64]) {
        debug_assert_eq!(data.len(), self.shape.iter().product::<usize>());
        for axis in 0..3 {
            self.transform(data, axis, true);
        }
        let s = self.shape;
        for i in 0..s[0] {
            for j in 0..s[1] {
                for k in 0..s[2] {
                    let lam =
                        self.bases[0].eigenvalues[i] + self.bases[1].eigenvalues[j] + self.bases[2].eigenvalues[k];
                    let coeff = a + b * lam;
                    let idx = (i * s[1] + j) * s[2] + k;
                    data[idx] = if coeff.abs() > 1e-300 { data[idx] / coeff } else { 0.0 };
                }
            }
        }
        for axis in 0..3 {
            self.transform(data, axis, false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense `-δ²` for a line, assembled independently from the stencils.
    fn minus_second_difference(kind: LineKind, n: usize, h: f64) -> Vec<Vec<f64>> {
        let m = if kind == LineKind::NodeDirichlet { n - 1 } else { n };
        let mut a = vec![vec![0.0; m]; m];
        let c = 1.0 / (h * h);
        for i in 0..m {
            a[i][i] = 2.0 * c;
            if i > 0 {
                a[i][i - 1] = -c;
            }
            if i + 1 < m {
                a[i][i + 1] = -c;
            }
        }
        match kind {
            LineKind::CellNeumann => {
                a[0][0] = c;
                a[m - 1][m - 1] = c;
            }
            LineKind::CellWall => {
                a[0][0] = 3.0 * c;
                a[m - 1][m - 1] = 3.0 * c;
            }
            LineKind::NodeDirichlet => {}
            LineKind::Periodic => {
                a[0][m - 1] = -c;
                a[m - 1][0] = -c;
            }
        }
        a
    }

    #[test]
    fn bases_are_orthonormal_eigenvectors() {
        for kind in [LineKind::CellNeumann, LineKind::CellWall, LineKind::NodeDirichlet, LineKind::Periodic] {
            for n in [4usize, 5, 8, 9] {
                let h = 0.3;
                let b = LineBasis::new(kind, n, h);
                let a = minus_second_difference(kind, n, h);
                let m = b.len();
                for k in 0..m {
                    let v = &b.vectors[k * m..(k + 1) * m];
                    for l in 0..m {
                        let w = &b.vectors[l * m..(l + 1) * m];
                        let d: f64 = v.iter().zip(w).map(|(x, y)| x * y).sum();
                        let e = if k == l { 1.0 } else { 0.0 };
                        assert!((d - e).abs() < 1e-12, "{kind:?} n={n} <{k},{l}>={d}");
                    }
                    for i in 0..m {
                        let av: f64 = (0..m).map(|j| a[i][j] * v[j]).sum();
                        assert!((av - b.eigenvalues[k] * v[i]).abs() < 1e-9, "{kind:?} n={n} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn helmholtz_solve_inverts_operator() {
        let n = [6usize, 5, 4];
        let h = [0.2, 0.25, 0.5];
        let kinds = [LineKind::CellNeumann, LineKind::CellWall, LineKind::Periodic];
        let mut solver = SeparableSolver::new([
            Some((kinds[0], n[0], h[0])),
            Some((kinds[1], n[1], h[1])),
            Some((kinds[2], n[2], h[2])),
        ]);
        let s = solver.shape();
        let total: usize = s.iter().product();
        let f: Vec<f64> = (0..total).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let mut x = f.clone();
        solver.solve(1.0, 0.7, &mut x);
        let mats: Vec<_> = (0..3).map(|a| minus_second_difference(kinds[a], n[a], h[a])).collect();
        for i in 0..s[0] {
            for j in 0..s[1] {
                for k in 0..s[2] {
                    let idx = |i: usize, j: usize, k: usize| (i * s[1] + j) * s[2] + k;
                    let mut lx = 0.0;
                    for p in 0..s[0] {
                        lx += mats[0][i][p] * x[idx(p, j, k)];
                    }
                    for p in 0..s[1] {
                        lx += mats[1][j][p] * x[idx(i, p, k)];
                    }
                    for p in 0..s[2] {
                        lx += mats[2][k][p] * x[idx(i, j, p)];
                    }
                    let r = x[idx(i, j, k)] + 0.7 * lx - f[idx(i, j, k)];
                    assert!(r.abs() < 1e-11, "residual {r}");
                }
            }
        }
    }
}
