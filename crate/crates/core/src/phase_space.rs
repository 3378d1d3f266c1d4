//! Discrete phase space: rectangular grid with corner topology, angular
//! quadrature, frequency groups and the diagonal weight matrix.

use crate::error::{check_len, Result, TrtError};
use crate::gauss::gauss_legendre_on;
use std::f64::consts::PI;

/// A side of a rectangular cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    /// Outward unit normal of this side.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::Bottom => Side::Top,
            Side::Top => Side::Bottom,
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Side::Left | Side::Right)
    }
}

/// Orientation of a face normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Outer corner edges: each corner touches two cell sides, on the given
/// half of that side. Halves are numbered from the lower/left end.
///
/// Corners are counterclockwise: 0 bottom-left, 1 bottom-right,
/// 2 top-right, 3 top-left.
pub const CORNER_OUTER: [[(Side, usize); 2]; 4] = [
    [(Side::Left, 0), (Side::Bottom, 0)],
    [(Side::Right, 0), (Side::Bottom, 1)],
    [(Side::Right, 1), (Side::Top, 1)],
    [(Side::Left, 1), (Side::Top, 0)],
];

/// Inner corner edges: neighbouring corner inside the cell and the
/// outward normal of the shared edge as seen from this corner.
pub const CORNER_INNER: [[(usize, [f64; 2]); 2]; 4] = [
    [(1, [1.0, 0.0]), (3, [0.0, 1.0])],
    [(0, [-1.0, 0.0]), (2, [0.0, 1.0])],
    [(3, [-1.0, 0.0]), (1, [0.0, -1.0])],
    [(2, [1.0, 0.0]), (0, [0.0, -1.0])],
];

/// Corner of the adjacent cell across `side` that shares the half-edge
/// touched by corner `alpha`.
pub fn mirror_corner(alpha: usize, side: Side) -> usize {
    if side.is_vertical() {
        alpha ^ 1
    } else {
        3 - alpha
    }
}

/// Uniform rectangular grid. Cell `i = ix + nx*iy`. Vertical faces come
/// first (`ix + (nx+1)*iy`), then horizontal faces (`ix + nx*iy`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
}

impl SpatialGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(TrtError::InvalidArgument(format!(
                "grid needs at least one cell per direction, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(TrtError::InvalidArgument(format!(
                "grid lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(SpatialGrid {
            nx,
            ny,
            lx,
            ly,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_corners(&self) -> usize {
        4 * self.n_cells()
    }

    pub fn n_vfaces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_hfaces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_faces(&self) -> usize {
        self.n_vfaces() + self.n_hfaces()
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        ix + self.nx * iy
    }

    #[inline]
    pub fn cell_coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Area of corner `alpha` of cell `i`; every corner is a quarter cell.
    pub fn corner_area(&self, _i: usize, _alpha: usize) -> f64 {
        0.25 * self.cell_area()
    }

    /// Vertical face with left-edge index `ix` in row `iy`, `ix` in `0..=nx`.
    #[inline]
    pub fn vface(&self, ix: usize, iy: usize) -> usize {
        ix + (self.nx + 1) * iy
    }

    /// Horizontal face with bottom-edge index `iy` in column `ix`, `iy` in `0..=ny`.
    #[inline]
    pub fn hface(&self, ix: usize, iy: usize) -> usize {
        self.n_vfaces() + ix + self.nx * iy
    }

    /// Face on the given side of cell `i`.
    #[inline]
    pub fn cell_face(&self, i: usize, side: Side) -> usize {
        let (ix, iy) = self.cell_coords(i);
        match side {
            Side::Left => self.vface(ix, iy),
            Side::Right => self.vface(ix + 1, iy),
            Side::Bottom => self.hface(ix, iy),
            Side::Top => self.hface(ix, iy + 1),
        }
    }

    /// Neighbouring cell across `side`, if any.
    pub fn neighbor(&self, i: usize, side: Side) -> Option<usize> {
        let (ix, iy) = self.cell_coords(i);
        match side {
            Side::Left => (ix > 0).then(|| i - 1),
            Side::Right => (ix + 1 < self.nx).then(|| i + 1),
            Side::Bottom => (iy > 0).then(|| i - self.nx),
            Side::Top => (iy + 1 < self.ny).then(|| i + self.nx),
        }
    }

    /// Neighbour map of a corner across one of its outer edges:
    /// `(i, alpha)` to `(i', alpha')`.
    pub fn corner_neighbor(&self, i: usize, alpha: usize, side: Side) -> Option<(usize, usize)> {
        self.neighbor(i, side).map(|j| (j, mirror_corner(alpha, side)))
    }

    pub fn face_axis(&self, f: usize) -> Axis {
        if f < self.n_vfaces() {
            Axis::X
        } else {
            Axis::Y
        }
    }

    pub fn face_length(&self, f: usize) -> f64 {
        match self.face_axis(f) {
            Axis::X => self.dy,
            Axis::Y => self.dx,
        }
    }

    /// Cells on the low (`-normal`) and high (`+normal`) sides of a face.
    pub fn face_cells(&self, f: usize) -> (Option<usize>, Option<usize>) {
        if f < self.n_vfaces() {
            let ix = f % (self.nx + 1);
            let iy = f / (self.nx + 1);
            let lo = (ix > 0).then(|| self.cell(ix - 1, iy));
            let hi = (ix < self.nx).then(|| self.cell(ix, iy));
            (lo, hi)
        } else {
            let h = f - self.n_vfaces();
            let ix = h % self.nx;
            let iy = h / self.nx;
            let lo = (iy > 0).then(|| self.cell(ix, iy - 1));
            let hi = (iy < self.ny).then(|| self.cell(ix, iy));
            (lo, hi)
        }
    }

    /// Corners of the low and high cells touching half `h` of face `f`.
    pub fn face_half_corners(&self, f: usize, h: usize) -> (usize, usize) {
        match (self.face_axis(f), h) {
            (Axis::X, 0) => (1, 0),
            (Axis::X, _) => (2, 3),
            (Axis::Y, 0) => (3, 0),
            (Axis::Y, _) => (2, 1),
        }
    }

    /// Boundary side of the domain a face lies on, if it is a boundary face.
    pub fn boundary_side(&self, f: usize) -> Option<Side> {
        match self.face_cells(f) {
            (None, Some(_)) => Some(match self.face_axis(f) {
                Axis::X => Side::Left,
                Axis::Y => Side::Bottom,
            }),
            (Some(_), None) => Some(match self.face_axis(f) {
                Axis::X => Side::Right,
                Axis::Y => Side::Top,
            }),
            _ => None,
        }
    }

    /// Length of the outer corner edge on `side` (half the cell side).
    pub fn half_edge_length(&self, side: Side) -> f64 {
        if side.is_vertical() {
            0.5 * self.dy
        } else {
            0.5 * self.dx
        }
    }

    /// Length of an inner corner edge with the given normal.
    pub fn inner_edge_length(&self, normal: [f64; 2]) -> f64 {
        if normal[0] != 0.0 {
            0.5 * self.dy
        } else {
            0.5 * self.dx
        }
    }

    /// Faces lying on the right boundary, bottom to top.
    pub fn right_boundary_faces(&self) -> Vec<usize> {
        (0..self.ny).map(|iy| self.vface(self.nx, iy)).collect()
    }
}

/// Product quadrature on the upper hemisphere with weights doubled.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularQuadrature {
    pub n_polar: usize,
    pub n_azim: usize,
    pub dirs: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl AngularQuadrature {
    /// Gauss–Legendre in the polar cosine on `(0,1)` crossed with a
    /// midpoint azimuthal rule in each of the four quadrants.
    pub fn new(n_polar: usize, n_azim: usize) -> Result<Self> {
        if n_polar == 0 || n_azim == 0 {
            return Err(TrtError::InvalidArgument(
                "quadrature orders must be at least 1".into(),
            ));
        }
        let (mu, wmu) = gauss_legendre_on(n_polar, 0.0, 1.0);
        let dphi = 0.5 * PI / n_azim as f64;
        let mut dirs = Vec::with_capacity(4 * n_polar * n_azim);
        let mut weights = Vec::with_capacity(4 * n_polar * n_azim);
        for q in 0..4 {
            for (p, &z) in mu.iter().enumerate() {
                let s = (1.0 - z * z).sqrt();
                for a in 0..n_azim {
                    let ang = 0.5 * PI * q as f64 + (a as f64 + 0.5) * dphi;
                    dirs.push([s * ang.cos(), s * ang.sin(), z]);
                    weights.push(2.0 * wmu[p] * dphi);
                }
            }
        }
        Ok(AngularQuadrature {
            n_polar,
            n_azim,
            dirs,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Frequency groups given by their upper boundaries; group 0 starts at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGroups {
    upper: Vec<f64>,
}

impl FrequencyGroups {
    pub fn new(upper: Vec<f64>) -> Result<Self> {
        if upper.is_empty() {
            return Err(TrtError::InvalidArgument("no frequency groups".into()));
        }
        let mut prev = 0.0;
        for &u in &upper {
            if !(u.is_finite() && u > prev) {
                return Err(TrtError::InvalidArgument(format!(
                    "group boundaries must be finite and strictly increasing, got {upper:?}"
                )));
            }
            prev = u;
        }
        Ok(FrequencyGroups { upper })
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bounds(&self, g: usize) -> (f64, f64) {
        let lo = if g == 0 { 0.0 } else { self.upper[g - 1] };
        (lo, self.upper[g])
    }

    pub fn width(&self, g: usize) -> f64 {
        let (a, b) = self.bounds(g);
        b - a
    }

    pub fn midpoint(&self, g: usize) -> f64 {
        let (a, b) = self.bounds(g);
        0.5 * (a + b)
    }
}

/// Diagonal of the weight matrix, `w_m * S_{i,alpha}` in phase-space order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub diag: Vec<f64>,
}

impl WeightMatrix {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn sqrt(&self) -> Vec<f64> {
        self.diag.iter().map(|w| w.sqrt()).collect()
    }
}

/// The full discrete phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpace {
    pub grid: SpatialGrid,
    pub quad: AngularQuadrature,
    pub groups: FrequencyGroups,
}

impl PhaseSpace {
    pub fn new(grid: SpatialGrid, quad: AngularQuadrature, groups: FrequencyGroups) -> Self {
        PhaseSpace { grid, quad, groups }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_dirs(&self) -> usize {
        self.quad.len()
    }

    /// Length `d = G*M*X*4` of a corner-intensity vector.
    pub fn dim(&self) -> usize {
        self.n_groups() * self.n_dirs() * self.grid.n_corners()
    }

    /// Number of zeroth-moment entries per group (cells then faces).
    pub fn phi_per_group(&self) -> usize {
        self.grid.n_cells() + self.grid.n_faces()
    }

    /// Length `p = (X + X_f)*G` of a zeroth-moment vector.
    pub fn phi_dim(&self) -> usize {
        self.phi_per_group() * self.n_groups()
    }

    /// Start of the `(g, m)` block of `X*4` corner values.
    #[inline]
    pub fn block(&self, g: usize, m: usize) -> usize {
        (g * self.n_dirs() + m) * self.grid.n_corners()
    }

    #[inline]
    pub fn index(&self, g: usize, m: usize, i: usize, alpha: usize) -> usize {
        self.block(g, m) + 4 * i + alpha
    }

    pub fn weights(&self) -> WeightMatrix {
        let mut diag = Vec::with_capacity(self.dim());
        for _g in 0..self.n_groups() {
            for &w in &self.quad.weights {
                for i in 0..self.grid.n_cells() {
                    for a in 0..4 {
                        diag.push(w * self.grid.corner_area(i, a));
                    }
                }
            }
        }
        WeightMatrix { diag }
    }

    /// Text descriptor used to guard archives against mismatched configurations.
    pub fn descriptor(&self) -> String {
        let bounds: Vec<String> = self.groups.upper().iter().map(|b| format!("{b:e}")).collect();
        format!(
            "grid={}x{} lx={:e} ly={:e} quad={}x{} groups={}",
            self.grid.nx,
            self.grid.ny,
            self.grid.lx,
            self.grid.ly,
            self.quad.n_polar,
            self.quad.n_azim,
            bounds.join(",")
        )
    }
}

/// `sum_d W_d u_d v_d`, accumulated in storage order (g, m, i, alpha).
pub fn weighted_inner(u: &[f64], v: &[f64], w: &WeightMatrix) -> Result<f64> {
    check_len("weighted_inner operand", w.len(), u.len())?;
    check_len("weighted_inner operand", w.len(), v.len())?;
    Ok(u.iter()
        .zip(v)
        .zip(&w.diag)
        .fold(0.0, |acc, ((a, b), c)| acc + c * a * b))
}

pub fn weighted_norm(u: &[f64], w: &WeightMatrix) -> Result<f64> {
    weighted_inner(u, u, w).map(f64::sqrt)
}
