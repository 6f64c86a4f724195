//! Uniform Cartesian grids and the discrete calculus shared by every stage.
//!
//! Scalars live at cell centres. Vectors use the MAC layout: component `a`
//! sits at the centres of the faces normal to axis `a`. In [`BcMode::Box`]
//! a component has `n_a + 1` faces along its own axis (the two outermost ones
//! lie on the walls); in [`BcMode::Periodic`] it has `n_a` faces and face `0`
//! separates cell `n_a - 1` from cell `0`.
//!
//! Storage is row-major over `(x, y, z)` with `z` fastest. Two-dimensional
//! grids carry a unit third axis so the same indexing serves both cases.

use thiserror::Error;

/// Boundary treatment shared by all fields on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BcMode {
    /// Closed box: homogeneous Neumann for scalars, no-slip walls for velocity.
    Box,
    /// Every axis wraps.
    Periodic,
}

impl BcMode {
    pub fn name(self) -> &'static str {
        match self {
            BcMode::Box => "box",
            BcMode::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("expected {expected} per-axis entries, got {got}")]
    AxisCount { expected: usize, got: usize },
    #[error("axis {axis} has {cells} cells, at least 4 are required")]
    TooFewCells { axis: usize, cells: usize },
    #[error("axis {axis} has non-positive or non-finite extent {extent}")]
    Extent { axis: usize, extent: f64 },
    #[error("norm exponent must be >= 1 (or infinity), got {0}")]
    NormExponent(f64),
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Uniform mesh metadata. Cheap to copy; every field carries its own copy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    spacing: [f64; 3],
    extent: [f64; 3],
    bc: BcMode,
}

#[inline]
fn linear(shape: [usize; 3], ix: [usize; 3]) -> usize {
    (ix[0] * shape[1] + ix[1]) * shape[2] + ix[2]
}

/// Builds a grid: spacing is `extent / shape` per axis.
pub fn make_grid(dim: usize, shape: &[usize], extent: &[f64], bc: BcMode) -> Result<Grid, GridError> {
    Grid::new(dim, shape, extent, bc)
}

impl Grid {
    pub fn new(dim: usize, shape: &[usize], extent: &[f64], bc: BcMode) -> Result<Self, GridError> {
        if dim != 2 && dim != 3 {
            return Err(GridError::Dimension(dim));
        }
        if shape.len() != dim {
            return Err(GridError::AxisCount { expected: dim, got: shape.len() });
        }
        if extent.len() != dim {
            return Err(GridError::AxisCount { expected: dim, got: extent.len() });
        }
        let mut s = [1usize; 3];
        let mut e = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        for a in 0..dim {
            if shape[a] < 4 {
                return Err(GridError::TooFewCells { axis: a, cells: shape[a] });
            }
            if !(extent[a] > 0.0 && extent[a].is_finite()) {
                return Err(GridError::Extent { axis: a, extent: extent[a] });
            }
            s[a] = shape[a];
            e[a] = extent[a];
            h[a] = extent[a] / shape[a] as f64;
        }
        Ok(Grid { dim, shape: s, spacing: h, extent: e, bc })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; unused third axis reports 1.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn bc(&self) -> BcMode {
        self.bc
    }

    pub fn is_periodic(&self) -> bool {
        self.bc == BcMode::Periodic
    }

    pub fn n_cells(&self) -> usize {
        self.shape.iter().product()
    }

    /// Volume (area in 2D) of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// |Ω|.
    pub fn volume(&self) -> f64 {
        self.extent[..self.dim].iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.extent[..self.dim].iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn cell_index(&self, ix: [usize; 3]) -> usize {
        linear(self.shape, ix)
    }

    pub fn cell_center(&self, ix: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (ix[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    /// Multi-indices of all cells in storage order.
    pub fn cells(&self) -> IndexIter {
        IndexIter::new(self.shape)
    }

    /// Array shape of the faces normal to `axis`.
    pub fn face_shape(&self, axis: usize) -> [usize; 3] {
        let mut s = self.shape;
        if self.bc == BcMode::Box {
            s[axis] += 1;
        }
        s
    }

    pub fn n_faces(&self, axis: usize) -> usize {
        self.face_shape(axis).iter().product()
    }

    pub fn face_index(&self, axis: usize, ix: [usize; 3]) -> usize {
        linear(self.face_shape(axis), ix)
    }

    pub fn faces(&self, axis: usize) -> IndexIter {
        IndexIter::new(self.face_shape(axis))
    }

    pub fn face_center(&self, axis: usize, ix: [usize; 3]) -> [f64; 3] {
        let mut x = self.cell_center(ix);
        x[axis] -= 0.5 * self.spacing[axis];
        x
    }

    /// True for the two wall faces normal to `axis` in box mode.
    pub fn is_wall_face(&self, axis: usize, ix: [usize; 3]) -> bool {
        self.bc == BcMode::Box && (ix[axis] == 0 || ix[axis] == self.shape[axis])
    }

    /// The cells on the low and high side of a face, `None` beyond a wall.
    pub fn face_cells(&self, axis: usize, ix: [usize; 3]) -> (Option<[usize; 3]>, Option<[usize; 3]>) {
        let n = self.shape[axis];
        match self.bc {
            BcMode::Box => {
                let lo = if ix[axis] >= 1 {
                    let mut c = ix;
                    c[axis] -= 1;
                    Some(c)
                } else {
                    None
                };
                let hi = if ix[axis] < n { Some(ix) } else { None };
                (lo, hi)
            }
            BcMode::Periodic => {
                let mut c = ix;
                c[axis] = (ix[axis] + n - 1) % n;
                (Some(c), Some(ix))
            }
        }
    }

    /// Low and high face of a cell along `axis`, as indices into the face array.
    pub fn cell_faces(&self, axis: usize, ix: [usize; 3]) -> (usize, usize) {
        let lo = self.face_index(axis, ix);
        let mut hi = ix;
        hi[axis] += 1;
        if self.bc == BcMode::Periodic {
            hi[axis] %= self.shape[axis];
        }
        (lo, self.face_index(axis, hi))
    }

    /// Neighbouring cell along `axis` in direction `dir` (±1).
    pub fn neighbor(&self, ix: [usize; 3], axis: usize, dir: isize) -> Option<[usize; 3]> {
        let n = self.shape[axis] as isize;
        let j = ix[axis] as isize + dir;
        let mut out = ix;
        if j < 0 || j >= n {
            if self.bc == BcMode::Periodic {
                out[axis] = j.rem_euclid(n) as usize;
                Some(out)
            } else {
                None
            }
        } else {
            out[axis] = j as usize;
            Some(out)
        }
    }
}

/// Row-major multi-index iterator.
#[derive(Clone, Debug)]
pub struct IndexIter {
    shape: [usize; 3],
    next: Option<[usize; 3]>,
}

impl IndexIter {
    fn new(shape: [usize; 3]) -> Self {
        let next = if shape.iter().all(|&s| s > 0) { Some([0, 0, 0]) } else { None };
        IndexIter { shape, next }
    }
}

impl Iterator for IndexIter {
    type Item = [usize; 3];

    fn next(&mut self) -> Option<[usize; 3]> {
        let cur = self.next?;
        let mut n = cur;
        n[2] += 1;
        if n[2] == self.shape[2] {
            n[2] = 0;
            n[1] += 1;
            if n[1] == self.shape[1] {
                n[1] = 0;
                n[0] += 1;
            }
        }
        self.next = if n[0] == self.shape[0] { None } else { Some(n) };
        Some(cur)
    }
}

/// Advisory unit tag; arithmetic never checks it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Dimensionless,
    Density,
    Concentration,
    Pressure,
    Potential,
}

/// Cell-centred scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    quantity: Quantity,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField { grid, values: vec![value; grid.n_cells()], quantity: Quantity::Dimensionless }
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = grid.cells().map(|ix| f(grid.cell_center(ix))).collect();
        ScalarField { grid, values, quantity: Quantity::Dimensionless }
    }

    /// Wraps raw values; panics if the length does not match the grid.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_cells(), "scalar field length does not match grid");
        ScalarField { grid, values, quantity: Quantity::Dimensionless }
    }

    pub fn with_quantity(mut self, quantity: Quantity) -> Self {
        self.quantity = quantity;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, ix: [usize; 3]) -> f64 {
        self.values[self.grid.cell_index(ix)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), quantity: self.quantity }
    }

    /// Arithmetic face average along `axis`; wall faces copy the adjacent cell.
    pub fn face_average(&self, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        g.faces(axis)
            .map(|f| match g.face_cells(axis, f) {
                (Some(lo), Some(hi)) => 0.5 * (self.at(lo) + self.at(hi)),
                (Some(c), None) | (None, Some(c)) => self.at(c),
                (None, None) => 0.0,
            })
            .collect()
    }
}

/// MAC-staggered vector field, one face array per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let components = (0..grid.dim()).map(|a| vec![0.0; grid.n_faces(a)]).collect();
        VectorField { grid, components }
    }

    /// Samples component `a` of `f(a, x)` at the centres of the faces normal to `a`.
    pub fn from_fn(grid: Grid, f: impl Fn(usize, [f64; 3]) -> f64) -> Self {
        let components =
            (0..grid.dim()).map(|a| grid.faces(a).map(|ix| f(a, grid.face_center(a, ix))).collect()).collect();
        VectorField { grid, components }
    }

    pub fn from_components(grid: Grid, components: Vec<Vec<f64>>) -> Self {
        assert_eq!(components.len(), grid.dim(), "component count does not match grid dimension");
        for (a, c) in components.iter().enumerate() {
            assert_eq!(c.len(), grid.n_faces(a), "component {a} length does not match staggering");
        }
        VectorField { grid, components }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.components
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }

    /// Zeros the wall-normal faces (no penetration). No-op on periodic grids.
    pub fn zero_wall_faces(&mut self) {
        if self.grid.bc() != BcMode::Box {
            return;
        }
        let g = self.grid;
        for a in 0..g.dim() {
            for f in g.faces(a) {
                if g.is_wall_face(a, f) {
                    let i = g.face_index(a, f);
                    self.components[a][i] = 0.0;
                }
            }
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &VectorField) {
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in self.components.iter_mut().flatten() {
            *x *= s;
        }
    }

    /// Average of the two bracketing faces, per axis, at every cell centre.
    pub fn cell_centered(&self) -> Vec<[f64; 3]> {
        let g = &self.grid;
        g.cells()
            .map(|ix| {
                let mut v = [0.0; 3];
                for (a, va) in v.iter_mut().enumerate().take(g.dim()) {
                    let (lo, hi) = g.cell_faces(a, ix);
                    *va = 0.5 * (self.components[a][lo] + self.components[a][hi]);
                }
                v
            })
            .collect()
    }
}

/// Midpoint quadrature Σ f_i · |cell|.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Discrete L^p norm; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64, GridError> {
    if p.is_nan() || p < 1.0 {
        return Err(GridError::NormExponent(p));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let s: f64 = f.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * f.grid.cell_volume();
    Ok(s.powf(1.0 / p))
}

/// Cell inner product Σ f g |cell|.
pub fn cell_dot(f: &ScalarField, g: &ScalarField) -> f64 {
    f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * f.grid.cell_volume()
}

/// Face inner product Σ_a Σ u_a v_a |cell|.
pub fn face_dot(u: &VectorField, v: &VectorField) -> f64 {
    let s: f64 =
        u.components.iter().zip(&v.components).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum();
    s * u.grid.cell_volume()
}

/// Face-centred differences; wall faces carry zero normal gradient.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let components = (0..g.dim())
        .map(|a| {
            let inv_h = 1.0 / g.spacing()[a];
            g.faces(a)
                .map(|ix| match g.face_cells(a, ix) {
                    (Some(lo), Some(hi)) => (f.at(hi) - f.at(lo)) * inv_h,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    VectorField { grid: g, components }
}

/// Cell-centred difference of face values.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = vec![0.0; g.n_cells()];
    for a in 0..g.dim() {
        let inv_h = 1.0 / g.spacing()[a];
        let comp = &v.components[a];
        for (ci, ix) in g.cells().enumerate() {
            let (lo, hi) = g.cell_faces(a, ix);
            out[ci] += (comp[hi] - comp[lo]) * inv_h;
        }
    }
    ScalarField::from_values(g, out)
}

/// `divergence ∘ gradient`: Neumann in box mode, wrapped when periodic.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    divergence(&gradient(f))
}

/// Component-wise Laplacian of a staggered velocity with the boundary
/// condition of the grid. In box mode wall-normal faces are fixed at zero
/// and tangential neighbours beyond a wall use the odd ghost `-u`, which puts
/// the no-slip condition on the wall itself. Wall-face entries of the result
/// are zero.
pub fn vector_laplacian(u: &VectorField) -> VectorField {
    let g = u.grid;
    let h = g.spacing();
    let mut components = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let fs = g.face_shape(a);
        let comp = &u.components[a];
        let mut out = vec![0.0; comp.len()];
        for ix in g.faces(a) {
            if g.is_wall_face(a, ix) {
                continue;
            }
            let i = linear(fs, ix);
            let c = comp[i];
            let mut acc = 0.0;
            for b in 0..g.dim() {
                let inv_h2 = 1.0 / (h[b] * h[b]);
                let n_b = fs[b] as isize;
                for dir in [-1isize, 1] {
                    let j = ix[b] as isize + dir;
                    let nb = if j >= 0 && j < n_b {
                        let mut o = ix;
                        o[b] = j as usize;
                        comp[linear(fs, o)]
                    } else if g.is_periodic() {
                        let mut o = ix;
                        o[b] = j.rem_euclid(n_b) as usize;
                        comp[linear(fs, o)]
                    } else {
                        // b != a here: along its own axis a component never
                        // reaches beyond the wall faces
                        -c
                    };
                    acc += (nb - c) * inv_h2;
                }
            }
            out[i] = acc;
        }
        components.push(out);
    }
    VectorField { grid: g, components }
}
