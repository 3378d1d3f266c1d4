//! Discrete-ordinates transport: SCB corner-balance sweeps and the angular
//! moments extracted from corner intensities.

use crate::error::{check_len, Result, TrtError};
use crate::material::CellMaterial;
use crate::phase_space::{Axis, PhaseSpace, Side, CORNER_INNER, CORNER_OUTER};
use rayon::prelude::*;

/// Lower bound applied to every zeroth moment before it is used as a divisor.
///
/// It only has to keep ratios finite. Ahead of the Fleck-Cummings wave, faces
/// on the far boundary carry genuine zeroth moments near 1e-34, and any floor
/// above those values distorts their Eddington tensors.
pub const PHI_FLOOR: f64 = 1.0e-300;

#[inline]
pub fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
        Side::Bottom => 2,
        Side::Top => 3,
    }
}

/// Incoming intensities on the four domain sides, `[side][g * M + m]`.
/// Values for outgoing directions are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub n_groups: usize,
    pub n_dirs: usize,
    pub incoming: [Vec<f64>; 4],
}

impl BoundaryCondition {
    pub fn vacuum(ps: &PhaseSpace) -> Self {
        let n = ps.n_groups() * ps.n_dirs();
        BoundaryCondition {
            n_groups: ps.n_groups(),
            n_dirs: ps.n_dirs(),
            incoming: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Isotropic incoming intensity per group on one side.
    pub fn set_isotropic(&mut self, side: Side, per_group: &[f64]) {
        let v = &mut self.incoming[side_index(side)];
        for (g, &ig) in per_group.iter().enumerate() {
            for m in 0..self.n_dirs {
                v[g * self.n_dirs + m] = ig;
            }
        }
    }

    #[inline]
    pub fn get(&self, side: Side, g: usize, m: usize) -> f64 {
        self.incoming[side_index(side)][g * self.n_dirs + m]
    }
}

#[inline]
fn dot2(o: &[f64; 3], n: [f64; 2]) -> f64 {
    o[0] * n[0] + o[1] * n[1]
}

/// Solves a 4x4 system in place by Gaussian elimination with partial pivoting.
fn solve4(a: &mut [[f64; 4]; 4], b: &mut [f64; 4]) -> bool {
    for k in 0..4 {
        let mut p = k;
        for r in k + 1..4 {
            if a[r][k].abs() > a[p][k].abs() {
                p = r;
            }
        }
        if a[p][k] == 0.0 {
            return false;
        }
        a.swap(k, p);
        b.swap(k, p);
        for r in k + 1..4 {
            let f = a[r][k] / a[k][k];
            if f != 0.0 {
                for c in k..4 {
                    a[r][c] -= f * a[k][c];
                }
                b[r] -= f * b[k];
            }
        }
    }
    for k in (0..4).rev() {
        let mut s = b[k];
        for c in k + 1..4 {
            s -= a[k][c] * b[c];
        }
        b[k] = s / a[k][k];
    }
    true
}

/// Sweeps one `(g, m)` block. `out` and `prev` hold `X*4` corner values.
#[allow(clippy::too_many_arguments)]
fn sweep_block(
    ps: &PhaseSpace,
    g: usize,
    m: usize,
    mat: &CellMaterial,
    prev: &[f64],
    inv_cdt: f64,
    bc: &BoundaryCondition,
    out: &mut [f64],
) -> bool {
    let grid = &ps.grid;
    let om = &ps.quad.dirs[m];
    let xs: Vec<usize> = if om[0] >= 0.0 {
        (0..grid.nx).collect()
    } else {
        (0..grid.nx).rev().collect()
    };
    let ys: Vec<usize> = if om[1] >= 0.0 {
        (0..grid.ny).collect()
    } else {
        (0..grid.ny).rev().collect()
    };
    for &iy in &ys {
        for &ix in &xs {
            let i = grid.cell(ix, iy);
            let s = grid.corner_area(i, 0);
            let kappa = mat.kappa(g, i);
            let src = kappa * s * mat.planck(g, i);
            let mut a = [[0.0; 4]; 4];
            let mut b = [0.0; 4];
            for alpha in 0..4 {
                a[alpha][alpha] += s * inv_cdt + kappa * s;
                b[alpha] += s * inv_cdt * prev[4 * i + alpha] + src;
                for &(side, _) in &CORNER_OUTER[alpha] {
                    let w = dot2(om, side.normal()) * grid.half_edge_length(side);
                    if w > 0.0 {
                        a[alpha][alpha] += w;
                    } else {
                        let up = match grid.corner_neighbor(i, alpha, side) {
                            Some((j, beta)) => out[4 * j + beta],
                            None => bc.get(side, g, m),
                        };
                        b[alpha] -= w * up;
                    }
                }
                for &(beta, n) in &CORNER_INNER[alpha] {
                    let w = 0.5 * dot2(om, n) * grid.inner_edge_length(n);
                    a[alpha][alpha] += w;
                    a[alpha][beta] += w;
                }
            }
            if !solve4(&mut a, &mut b) {
                return false;
            }
            out[4 * i..4 * i + 4].copy_from_slice(&b);
        }
    }
    true
}

/// One backward-Euler SCB transport solve at fixed material state.
pub fn scb_sweep(
    ps: &PhaseSpace,
    mat: &CellMaterial,
    i_prev: &[f64],
    dt: f64,
    c: f64,
    bc: &BoundaryCondition,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(TrtError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    check_len("previous intensity", ps.dim(), i_prev.len())?;
    check_len("boundary groups", ps.n_groups(), bc.n_groups)?;
    check_len("boundary directions", ps.n_dirs(), bc.n_dirs)?;
    let nblk = ps.grid.n_corners();
    let nm = ps.n_dirs();
    let inv_cdt = 1.0 / (c * dt);
    let mut out = vec![0.0; ps.dim()];
    let ok = out
        .par_chunks_mut(nblk)
        .zip(i_prev.par_chunks(nblk))
        .enumerate()
        .all(|(k, (o, p))| sweep_block(ps, k / nm, k % nm, mat, p, inv_cdt, bc, o));
    if ok {
        Ok(out)
    } else {
        Err(TrtError::Singular("corner balance system"))
    }
}

/// Zeroth moments (cells then faces per group) and normal face fluxes.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportMoments {
    /// `phi[g * (X + X_f) + i]` for cells, `phi[g * (X + X_f) + X + f]` for faces.
    pub phi: Vec<f64>,
    /// Face-normal flux component `[g * X_f + f]`.
    pub face_flux: Vec<f64>,
    /// Cell-average flux `[g * X + i]`.
    pub cell_flux: Vec<[f64; 2]>,
}

impl TransportMoments {
    pub fn phi_cell<'a>(&'a self, ps: &PhaseSpace, g: usize) -> &'a [f64] {
        let n = ps.phi_per_group();
        &self.phi[g * n..g * n + ps.grid.n_cells()]
    }

    pub fn phi_face<'a>(&'a self, ps: &PhaseSpace, g: usize) -> &'a [f64] {
        let n = ps.phi_per_group();
        &self.phi[g * n + ps.grid.n_cells()..(g + 1) * n]
    }
}

/// Upwinded half-edge intensity on half `h` of face `f` for direction `m`.
#[inline]
pub(crate) fn half_edge_value(
    ps: &PhaseSpace,
    block: &[f64],
    bc: &BoundaryCondition,
    g: usize,
    m: usize,
    f: usize,
    h: usize,
) -> f64 {
    let grid = &ps.grid;
    let om = &ps.quad.dirs[m];
    let comp = match grid.face_axis(f) {
        Axis::X => om[0],
        Axis::Y => om[1],
    };
    let (lo, hi) = grid.face_cells(f);
    let (alo, ahi) = grid.face_half_corners(f, h);
    if comp > 0.0 {
        match lo {
            Some(i) => block[4 * i + alo],
            None => bc.get(grid.boundary_side(f).unwrap(), g, m),
        }
    } else {
        match hi {
            Some(i) => block[4 * i + ahi],
            None => bc.get(grid.boundary_side(f).unwrap(), g, m),
        }
    }
}

/// Cell and face zeroth moments plus fluxes of a corner-intensity field.
pub fn compute_moments(ps: &PhaseSpace, intensity: &[f64], bc: &BoundaryCondition) -> Result<TransportMoments> {
    check_len("intensity", ps.dim(), intensity.len())?;
    let grid = &ps.grid;
    let (nc, nf, ng) = (grid.n_cells(), grid.n_faces(), ps.n_groups());
    let npg = ps.phi_per_group();
    let mut phi = vec![0.0; ps.phi_dim()];
    let mut face_flux = vec![0.0; ng * nf];
    let mut cell_flux = vec![[0.0; 2]; ng * nc];
    for g in 0..ng {
        for m in 0..ps.n_dirs() {
            let w = ps.quad.weights[m];
            let om = ps.quad.dirs[m];
            let blk = &intensity[ps.block(g, m)..ps.block(g, m) + grid.n_corners()];
            for i in 0..nc {
                let avg = 0.25 * (blk[4 * i] + blk[4 * i + 1] + blk[4 * i + 2] + blk[4 * i + 3]);
                phi[g * npg + i] += w * avg;
                let cf = &mut cell_flux[g * nc + i];
                cf[0] += w * om[0] * avg;
                cf[1] += w * om[1] * avg;
            }
            for f in 0..nf {
                let v = 0.5
                    * (half_edge_value(ps, blk, bc, g, m, f, 0) + half_edge_value(ps, blk, bc, g, m, f, 1));
                phi[g * npg + nc + f] += w * v;
                let comp = match grid.face_axis(f) {
                    Axis::X => om[0],
                    Axis::Y => om[1],
                };
                face_flux[g * nf + f] += w * comp * v;
            }
        }
    }
    Ok(TransportMoments {
        phi,
        face_flux,
        cell_flux,
    })
}

/// Isotropic field `I_{g,m,i,alpha} = values[g * X + i]`.
pub fn isotropic_field(ps: &PhaseSpace, values: &[f64]) -> Vec<f64> {
    let nc = ps.grid.n_cells();
    let mut out = vec![0.0; ps.dim()];
    for g in 0..ps.n_groups() {
        for m in 0..ps.n_dirs() {
            let b = ps.block(g, m);
            for i in 0..nc {
                out[b + 4 * i..b + 4 * i + 4].fill(values[g * nc + i]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{random_material, random_positive, space, uniform_material};
    use nalgebra::{Matrix4, Vector4};
    use std::f64::consts::PI;

    const C: f64 = 29.979_245_8;

    #[test]
    fn equilibrium_is_reproduced() {
        let ps = space(3, 2, 2, 2, &[1.0, 3.0]);
        let planck = [0.7, 0.2];
        let mat = uniform_material(ps.grid.n_cells(), &[2.0, 0.5], &planck);
        let per_cell: Vec<f64> = planck.iter().flat_map(|&b| vec![b; ps.grid.n_cells()]).collect();
        let prev = isotropic_field(&ps, &per_cell);
        let mut bc = BoundaryCondition::vacuum(&ps);
        for side in Side::ALL {
            bc.set_isotropic(side, &planck);
        }
        let out = scb_sweep(&ps, &mat, &prev, 0.01, C, &bc).unwrap();
        for (a, b) in out.iter().zip(&prev) {
            assert!((a - b).abs() < 1e-13 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn single_cell_matches_hand_assembled_system() {
        let ps = space(1, 1, 1, 1, &[1.0]);
        let (dx, dy) = (ps.grid.dx, ps.grid.dy);
        let (kappa, planck, dt) = (3.0, 0.4, 0.02);
        let mat = uniform_material(1, &[kappa], &[planck]);
        let prev = vec![0.3, 0.5, 0.7, 0.9]
            .into_iter()
            .cycle()
            .take(ps.dim())
            .collect::<Vec<_>>();
        let (il, ib) = (1.25, 0.75);
        let mut bc = BoundaryCondition::vacuum(&ps);
        bc.set_isotropic(Side::Left, &[il]);
        bc.set_isotropic(Side::Bottom, &[ib]);
        let out = scb_sweep(&ps, &mat, &prev, dt, C, &bc).unwrap();

        // Direction 0 points into the first quadrant.
        let [mu, eta, _] = ps.quad.dirs[0];
        assert!(mu > 0.0 && eta > 0.0);
        let s = 0.25 * dx * dy;
        let d = s / (C * dt) + kappa * s;
        let (hx, hy) = (0.25 * mu * dy, 0.25 * eta * dx);
        let (ox, oy) = (0.5 * mu * dy, 0.5 * eta * dx);
        // Corners: bottom-left, bottom-right, top-right, top-left.
        let a = Matrix4::new(
            d + hx + hy, hx, 0.0, hy,
            -hx, d + ox - hx + hy, hy, 0.0,
            0.0, -hy, d + ox + oy - hx - hy, -hx,
            -hy, 0.0, hx, d + oy + hx - hy,
        );
        let p = &prev[0..4];
        let q = s / (C * dt);
        let src = kappa * s * planck;
        let b = Vector4::new(
            q * p[0] + src + ox * il + oy * ib,
            q * p[1] + src + oy * ib,
            q * p[2] + src,
            q * p[3] + src + ox * il,
        );
        let x = a.lu().solve(&b).unwrap();
        for k in 0..4 {
            assert!((out[k] - x[k]).abs() < 1e-13 * x[k].abs(), "corner {k}: {} vs {}", out[k], x[k]);
        }
    }

    #[test]
    fn every_block_conserves_particles() {
        let ps = space(3, 2, 2, 1, &[1.0, 4.0]);
        let nc = ps.grid.n_cells();
        let mat = random_material(nc, 2, 3);
        let prev = random_positive(ps.dim(), 4);
        let mut bc = BoundaryCondition::vacuum(&ps);
        for (k, side) in Side::ALL.into_iter().enumerate() {
            let v = random_positive(ps.n_groups() * ps.n_dirs(), 10 + k as u64);
            bc.incoming[side_index(side)] = v;
        }
        let dt = 0.05;
        let out = scb_sweep(&ps, &mat, &prev, dt, C, &bc).unwrap();
        let grid = &ps.grid;
        for g in 0..ps.n_groups() {
            for m in 0..ps.n_dirs() {
                let om = ps.quad.dirs[m];
                let b0 = ps.block(g, m);
                let (mut sum, mut scale) = (0.0, 0.0);
                for i in 0..nc {
                    let s = grid.corner_area(i, 0);
                    for alpha in 0..4 {
                        let x = out[b0 + 4 * i + alpha];
                        let terms = [
                            s * (x - prev[b0 + 4 * i + alpha]) / (C * dt),
                            mat.kappa(g, i) * s * x,
                            -mat.kappa(g, i) * s * mat.planck(g, i),
                        ];
                        for &(side, _) in &CORNER_OUTER[alpha] {
                            if grid.corner_neighbor(i, alpha, side).is_none() {
                                let n = side.normal();
                                let w = (om[0] * n[0] + om[1] * n[1]) * grid.half_edge_length(side);
                                let v = if w > 0.0 { x } else { bc.get(side, g, m) };
                                sum += w * v;
                                scale += (w * v).abs();
                            }
                        }
                        sum += terms.iter().sum::<f64>();
                        scale += terms.iter().map(|t| t.abs()).sum::<f64>();
                    }
                }
                assert!(sum.abs() < 1e-13 * scale, "block ({g},{m}): imbalance {sum:e} of {scale:e}");
            }
        }
    }

    #[test]
    fn isotropic_field_moments() {
        let ps = space(2, 3, 2, 2, &[1.0, 2.0]);
        let nc = ps.grid.n_cells();
        let values: Vec<f64> = (0..2 * nc).map(|k| 0.5 + k as f64).collect();
        let field = isotropic_field(&ps, &values);
        let tm = compute_moments(&ps, &field, &BoundaryCondition::vacuum(&ps)).unwrap();
        for g in 0..2 {
            for i in 0..nc {
                let want = 4.0 * PI * values[g * nc + i];
                assert!((tm.phi_cell(&ps, g)[i] - want).abs() < 1e-12 * want);
                let cf = tm.cell_flux[g * nc + i];
                assert!(cf[0].abs() < 1e-12 * want && cf[1].abs() < 1e-12 * want);
            }
        }
        // An interior face sees the same value from both sides.
        let f = ps.grid.vface(1, 1);
        let want = 4.0 * PI * values[ps.grid.cell(0, 1)];
        let got = tm.phi_face(&ps, 0)[f];
        assert!(got > 0.0 && got.is_finite());
        let mixed = 2.0 * PI * (values[ps.grid.cell(0, 1)] + values[ps.grid.cell(1, 1)]);
        assert!((got - mixed).abs() < 1e-12 * want.max(mixed));
    }

    #[test]
    fn beam_moments_pick_one_direction() {
        let ps = space(2, 2, 1, 2, &[1.0]);
        let m0 = 3;
        let mut field = vec![0.0; ps.dim()];
        let b = ps.block(0, m0);
        for i in 0..ps.grid.n_cells() {
            for a in 0..4 {
                field[b + 4 * i + a] = 1.0 + a as f64;
            }
        }
        let tm = compute_moments(&ps, &field, &BoundaryCondition::vacuum(&ps)).unwrap();
        let w = ps.quad.weights[m0];
        let om = ps.quad.dirs[m0];
        for i in 0..ps.grid.n_cells() {
            assert!((tm.phi[i] - 2.5 * w).abs() < 1e-14);
            assert!((tm.cell_flux[i][0] - 2.5 * w * om[0]).abs() < 1e-14);
            assert!((tm.cell_flux[i][1] - 2.5 * w * om[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let ps = space(1, 1, 1, 1, &[1.0]);
        let mat = uniform_material(1, &[1.0], &[1.0]);
        let bc = BoundaryCondition::vacuum(&ps);
        assert!(scb_sweep(&ps, &mat, &vec![0.0; ps.dim()], 0.0, C, &bc).is_err());
        assert!(scb_sweep(&ps, &mat, &[0.0; 3], 0.1, C, &bc).is_err());
    }
}
