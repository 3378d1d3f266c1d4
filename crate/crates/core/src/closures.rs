//! Eddington tensors and boundary factors.
//!
//! Closures are built in two stages. [`shape_moments`] applies the linear
//! second-moment and `|n.Omega|` operators to a normalized intensity,
//! splitting face quantities by upwind side. [`assemble_closures`] then
//! combines those partial moments with zeroth moments and the incoming
//! boundary data. Because the first stage is linear, moments of a POD
//! expansion are the same expansion of the basis moments.

use crate::error::{check_len, Result};
use crate::phase_space::{Axis, PhaseSpace, Side};
use crate::transport::{side_index, BoundaryCondition, PHI_FLOOR};

/// Tensor components stored per location: xx, yy, zz, xy.
pub const XX: usize = 0;
pub const YY: usize = 1;
pub const ZZ: usize = 2;
pub const XY: usize = 3;

#[inline]
fn tensor(o: &[f64; 3]) -> [f64; 4] {
    [o[0] * o[0], o[1] * o[1], o[2] * o[2], o[0] * o[1]]
}

/// Linear angular moments of a normalized intensity field.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeMoments {
    /// Cell tensors `[(g*X + i)*4 + k]`, then face partial tensors
    /// `[G*X*4 + ((g*X_f + f)*2 + s)*4 + k]`; side `s = 0` collects directions
    /// leaving the low cell, `s = 1` those leaving the high cell.
    pub h: Vec<f64>,
    /// Partial `|n.Omega|` moments `[(g*X_f + f)*2 + s]`.
    pub b: Vec<f64>,
}

impl ShapeMoments {
    pub fn h_len(ps: &PhaseSpace) -> usize {
        ps.n_groups() * 4 * (ps.grid.n_cells() + 2 * ps.grid.n_faces())
    }

    pub fn b_len(ps: &PhaseSpace) -> usize {
        ps.n_groups() * 2 * ps.grid.n_faces()
    }

    pub fn zeros(ps: &PhaseSpace) -> Self {
        ShapeMoments {
            h: vec![0.0; Self::h_len(ps)],
            b: vec![0.0; Self::b_len(ps)],
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ShapeMoments) {
        for (x, y) in self.h.iter_mut().zip(&other.h) {
            *x += a * y;
        }
        for (x, y) in self.b.iter_mut().zip(&other.b) {
            *x += a * y;
        }
    }

    #[inline]
    fn face_offset(ps: &PhaseSpace) -> usize {
        ps.n_groups() * ps.grid.n_cells() * 4
    }
}

/// Applies the discrete second-moment and boundary-factor operators.
pub fn shape_moments(ps: &PhaseSpace, ibar: &[f64]) -> Result<ShapeMoments> {
    check_len("normalized intensity", ps.dim(), ibar.len())?;
    let grid = &ps.grid;
    let (nc, nf) = (grid.n_cells(), grid.n_faces());
    let off = ShapeMoments::face_offset(ps);
    let mut sm = ShapeMoments::zeros(ps);
    for g in 0..ps.n_groups() {
        for m in 0..ps.n_dirs() {
            let w = ps.quad.weights[m];
            let om = &ps.quad.dirs[m];
            let t = tensor(om);
            let blk = &ibar[ps.block(g, m)..ps.block(g, m) + grid.n_corners()];
            for i in 0..nc {
                let avg = 0.25 * (blk[4 * i] + blk[4 * i + 1] + blk[4 * i + 2] + blk[4 * i + 3]);
                let base = (g * nc + i) * 4;
                for k in 0..4 {
                    sm.h[base + k] += w * t[k] * avg;
                }
            }
            for f in 0..nf {
                let comp = match grid.face_axis(f) {
                    Axis::X => om[0],
                    Axis::Y => om[1],
                };
                let (lo, hi) = grid.face_cells(f);
                let (s, cell, pick) = if comp > 0.0 { (0, lo, 0) } else { (1, hi, 1) };
                let Some(ci) = cell else { continue };
                let mut v = 0.0;
                for h in 0..2 {
                    let corners = grid.face_half_corners(f, h);
                    let a = if pick == 0 { corners.0 } else { corners.1 };
                    v += 0.5 * blk[4 * ci + a];
                }
                let base = off + ((g * nf + f) * 2 + s) * 4;
                for k in 0..4 {
                    sm.h[base + k] += w * t[k] * v;
                }
                sm.b[(g * nf + f) * 2 + s] += w * comp.abs() * v;
            }
        }
    }
    Ok(sm)
}

/// Angular integrals of the incoming boundary intensities per `(side, g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMoments {
    n_groups: usize,
    /// Incoming second-moment tensor `[side][g]`.
    pub tensor: [Vec<[f64; 4]>; 4],
    /// Incoming `sum w |n.Omega| I`.
    pub abs: [Vec<f64>; 4],
    /// Incoming `sum w I`.
    pub zeroth: [Vec<f64>; 4],
    /// Incoming partial current `sum_{n.Omega<0} w (n.Omega) I`, non-positive.
    pub current: [Vec<f64>; 4],
}

impl BoundaryMoments {
    pub fn new(ps: &PhaseSpace, bc: &BoundaryCondition) -> Self {
        let ng = ps.n_groups();
        let mut bm = BoundaryMoments {
            n_groups: ng,
            tensor: std::array::from_fn(|_| vec![[0.0; 4]; ng]),
            abs: std::array::from_fn(|_| vec![0.0; ng]),
            zeroth: std::array::from_fn(|_| vec![0.0; ng]),
            current: std::array::from_fn(|_| vec![0.0; ng]),
        };
        for side in Side::ALL {
            let s = side_index(side);
            let n = side.normal();
            for g in 0..ng {
                for m in 0..ps.n_dirs() {
                    let om = &ps.quad.dirs[m];
                    let nd = om[0] * n[0] + om[1] * n[1];
                    if nd >= 0.0 {
                        continue;
                    }
                    let w = ps.quad.weights[m] * bc.get(side, g, m);
                    let t = tensor(om);
                    for k in 0..4 {
                        bm.tensor[s][g][k] += w * t[k];
                    }
                    bm.abs[s][g] += w * nd.abs();
                    bm.zeroth[s][g] += w;
                    bm.current[s][g] += w * nd;
                }
            }
        }
        bm
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
}

/// Eddington tensor grid functions and boundary factors for every group.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosureSet {
    pub n_groups: usize,
    pub n_cells: usize,
    pub n_faces: usize,
    /// `[g * X + i]`.
    pub cell: Vec<[f64; 4]>,
    /// `[g * X_f + f]`.
    pub face: Vec<[f64; 4]>,
    /// `[g * X_f + f]`, zero on interior faces.
    pub beta: Vec<f64>,
}

/// Extreme values of a closure set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosureBounds {
    pub min_diag: f64,
    pub max_diag: f64,
    pub max_trace_err: f64,
    pub min_beta: f64,
    pub max_beta: f64,
}

impl ClosureBounds {
    pub fn admissible(&self, trace_tol: f64) -> bool {
        self.min_diag >= 0.0
            && self.max_diag <= 1.0
            && self.max_trace_err <= trace_tol
            && self.min_beta > 0.0
            && self.max_beta <= 1.0
    }
}

impl ClosureSet {
    /// Closures of an isotropic intensity, which depend only on the quadrature.
    pub fn isotropic(ps: &PhaseSpace) -> Self {
        let mut t = [0.0; 4];
        let mut w0 = 0.0;
        for (om, &w) in ps.quad.dirs.iter().zip(&ps.quad.weights) {
            let tt = tensor(om);
            for k in 0..4 {
                t[k] += w * tt[k];
            }
            w0 += w;
        }
        for v in &mut t {
            *v /= w0;
        }
        let grid = &ps.grid;
        let (ng, nc, nf) = (ps.n_groups(), grid.n_cells(), grid.n_faces());
        let mut beta = vec![0.0; ng * nf];
        for f in 0..nf {
            if let Some(side) = grid.boundary_side(f) {
                let n = side.normal();
                let b: f64 = ps
                    .quad
                    .dirs
                    .iter()
                    .zip(&ps.quad.weights)
                    .map(|(o, &w)| w * (o[0] * n[0] + o[1] * n[1]).abs())
                    .sum::<f64>()
                    / w0;
                for g in 0..ng {
                    beta[g * nf + f] = b;
                }
            }
        }
        ClosureSet {
            n_groups: ng,
            n_cells: nc,
            n_faces: nf,
            cell: vec![t; ng * nc],
            face: vec![t; ng * nf],
            beta,
        }
    }

    pub fn bounds(&self, ps: &PhaseSpace) -> ClosureBounds {
        let mut b = ClosureBounds {
            min_diag: f64::INFINITY,
            max_diag: f64::NEG_INFINITY,
            max_trace_err: 0.0,
            min_beta: f64::INFINITY,
            max_beta: f64::NEG_INFINITY,
        };
        for t in self.cell.iter().chain(&self.face) {
            for k in [XX, YY, ZZ] {
                b.min_diag = b.min_diag.min(t[k]);
                b.max_diag = b.max_diag.max(t[k]);
            }
            b.max_trace_err = b.max_trace_err.max((t[XX] + t[YY] + t[ZZ] - 1.0).abs());
        }
        for g in 0..self.n_groups {
            for f in 0..self.n_faces {
                if ps.grid.boundary_side(f).is_some() {
                    let v = self.beta[g * self.n_faces + f];
                    b.min_beta = b.min_beta.min(v);
                    b.max_beta = b.max_beta.max(v);
                }
            }
        }
        b
    }
}

/// Combines linear shape moments with zeroth moments into closures.
///
/// `phi` is a zeroth-moment vector in the `(X + X_f) * G` layout.
pub fn assemble_closures(
    ps: &PhaseSpace,
    sm: &ShapeMoments,
    phi: &[f64],
    bm: &BoundaryMoments,
) -> Result<ClosureSet> {
    check_len("shape moments", ShapeMoments::h_len(ps), sm.h.len())?;
    check_len("zeroth moments", ps.phi_dim(), phi.len())?;
    let grid = &ps.grid;
    let (ng, nc, nf) = (ps.n_groups(), grid.n_cells(), grid.n_faces());
    let npg = ps.phi_per_group();
    let off = ShapeMoments::face_offset(ps);
    let mut cell = vec![[0.0; 4]; ng * nc];
    let mut face = vec![[0.0; 4]; ng * nf];
    let mut beta = vec![0.0; ng * nf];
    for g in 0..ng {
        for i in 0..nc {
            let base = (g * nc + i) * 4;
            cell[g * nc + i].copy_from_slice(&sm.h[base..base + 4]);
        }
        for f in 0..nf {
            let (lo, hi) = grid.face_cells(f);
            let phi_f = phi[g * npg + nc + f].max(PHI_FLOOR);
            let mut num = [0.0; 4];
            let mut bnum = 0.0;
            for (s, cellid) in [(0usize, lo), (1usize, hi)] {
                if let Some(ci) = cellid {
                    let pc = phi[g * npg + ci].max(PHI_FLOOR);
                    let base = off + ((g * nf + f) * 2 + s) * 4;
                    for k in 0..4 {
                        num[k] += pc * sm.h[base + k];
                    }
                    bnum += pc * sm.b[(g * nf + f) * 2 + s];
                }
            }
            if let Some(side) = grid.boundary_side(f) {
                let sdx = side_index(side);
                for k in 0..4 {
                    num[k] += bm.tensor[sdx][g][k];
                }
                beta[g * nf + f] = (bnum + bm.abs[sdx][g]) / phi_f;
            }
            for k in 0..4 {
                face[g * nf + f][k] = num[k] / phi_f;
            }
        }
    }
    Ok(ClosureSet {
        n_groups: ng,
        n_cells: nc,
        n_faces: nf,
        cell,
        face,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbte::normalize_with_floor;
    use crate::testing::{random_positive, space};
    use crate::transport::{compute_moments, isotropic_field};
    use proptest::prelude::*;

    fn closures_of(ps: &PhaseSpace, field: &[f64], bc: &BoundaryCondition) -> ClosureSet {
        let tm = compute_moments(ps, field, bc).unwrap();
        let ibar = normalize_with_floor(ps, field, &tm.phi).unwrap();
        let sm = shape_moments(ps, &ibar).unwrap();
        assemble_closures(ps, &sm, &tm.phi, &BoundaryMoments::new(ps, bc)).unwrap()
    }

    #[test]
    fn isotropic_tensor_is_one_third() {
        let ps = space(2, 2, 3, 2, &[1.0]);
        let cs = ClosureSet::isotropic(&ps);
        for t in cs.cell.iter().chain(&cs.face) {
            assert!((t[XX] - 1.0 / 3.0).abs() < 1e-14);
            assert!((t[YY] - 1.0 / 3.0).abs() < 1e-14);
            assert!((t[ZZ] - 1.0 / 3.0).abs() < 1e-14);
            assert!(t[XY].abs() < 1e-15);
        }
    }

    #[test]
    fn isotropic_boundary_factor_tends_to_one_half() {
        // The exact value is 1/2; the product rule converges to it.
        let coarse = ClosureSet::isotropic(&space(1, 1, 2, 2, &[1.0]));
        let fine = ClosureSet::isotropic(&space(1, 1, 8, 16, &[1.0]));
        let f = 0;
        assert!((coarse.beta[f] - 0.5).abs() < 0.05);
        assert!((fine.beta[f] - 0.5).abs() < 2e-3);
        assert!((fine.beta[f] - 0.5).abs() < (coarse.beta[f] - 0.5).abs());
    }

    #[test]
    fn isotropic_field_reproduces_isotropic_closures() {
        let ps = space(3, 2, 2, 2, &[1.0, 2.0]);
        let nc = ps.grid.n_cells();
        let values: Vec<f64> = (0..2 * nc).map(|k| 1.0 + 0.1 * k as f64).collect();
        let field = isotropic_field(&ps, &values);
        let mut bc = BoundaryCondition::vacuum(&ps);
        for side in Side::ALL {
            bc.set_isotropic(side, &[0.3, 0.9]);
        }
        let got = closures_of(&ps, &field, &bc);
        let want = ClosureSet::isotropic(&ps);
        for (a, b) in got.cell.iter().chain(&got.face).zip(want.cell.iter().chain(&want.face)) {
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() < 1e-13, "{a:?} vs {b:?}");
            }
        }
        for (a, b) in got.beta.iter().zip(&want.beta) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn faint_fields_keep_their_closures() {
        let ps = space(3, 2, 2, 2, &[1.0]);
        let values: Vec<f64> = (0..ps.grid.n_cells()).map(|k| 1e-34 * (1.0 + k as f64)).collect();
        let got = closures_of(&ps, &isotropic_field(&ps, &values), &BoundaryCondition::vacuum(&ps));
        let b = got.bounds(&ps);
        assert!(b.max_trace_err < 1e-13, "trace error {}", b.max_trace_err);
        assert!(b.admissible(1e-13));
    }

    #[test]
    fn shape_moments_are_linear() {
        let ps = space(2, 2, 1, 2, &[1.0]);
        let x = random_positive(ps.dim(), 1);
        let y = random_positive(ps.dim(), 2);
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let mut want = shape_moments(&ps, &x).unwrap();
        want.h.iter_mut().for_each(|v| *v *= 2.0);
        want.b.iter_mut().for_each(|v| *v *= 2.0);
        want.axpy(-0.5, &shape_moments(&ps, &y).unwrap());
        let got = shape_moments(&ps, &z).unwrap();
        for (a, b) in got.h.iter().chain(&got.b).zip(want.h.iter().chain(&want.b)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_lengths_are_rejected() {
        let ps = space(1, 1, 1, 1, &[1.0]);
        assert!(shape_moments(&ps, &[1.0; 3]).is_err());
        let sm = ShapeMoments::zeros(&ps);
        let bm = BoundaryMoments::new(&ps, &BoundaryCondition::vacuum(&ps));
        assert!(assemble_closures(&ps, &sm, &[1.0; 2], &bm).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn positive_fields_give_admissible_closures(seed in 0u64..1_000_000, drive in 0.0f64..2.0) {
            let ps = space(2, 3, 2, 1, &[1.0, 2.0]);
            let field = random_positive(ps.dim(), seed);
            let mut bc = BoundaryCondition::vacuum(&ps);
            bc.set_isotropic(Side::Left, &[drive, 0.5 * drive]);
            let cs = closures_of(&ps, &field, &bc);
            let b = cs.bounds(&ps);
            prop_assert!(b.max_trace_err < 1e-13, "trace error {}", b.max_trace_err);
            prop_assert!(b.admissible(1e-13), "{:?}", b);
            for t in cs.cell.iter().chain(&cs.face) {
                prop_assert!(t[XY] * t[XY] <= t[XX] * t[YY] * (1.0 + 1e-12));
            }
        }
    }
}
