//! Normalized transport: snapshot normalization and the opacity-scaled
//! discrete NBTE operators `T`, `T_bar`, `L_bar` and source `Q_bar`.

use crate::error::{check_len, Result, TrtError};
use crate::material::CellMaterial;
use crate::phase_space::{PhaseSpace, CORNER_INNER, CORNER_OUTER};
use crate::transport::{BoundaryCondition, PHI_FLOOR};
use rayon::prelude::*;

/// Cell zeroth moments `[g * X + i]` extracted from a `(X + X_f) * G` vector, floored.
pub fn cell_phi(ps: &PhaseSpace, phi: &[f64]) -> Vec<f64> {
    let nc = ps.grid.n_cells();
    let npg = ps.phi_per_group();
    let mut out = Vec::with_capacity(nc * ps.n_groups());
    for g in 0..ps.n_groups() {
        out.extend(phi[g * npg..g * npg + nc].iter().map(|p| p.max(PHI_FLOOR)));
    }
    out
}

/// `I / max(phi_c, floor)` cornerwise.
pub fn normalize_with_floor(ps: &PhaseSpace, intensity: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    check_len("intensity", ps.dim(), intensity.len())?;
    check_len("zeroth moments", ps.phi_dim(), phi.len())?;
    let pc = cell_phi(ps, phi);
    let nc = ps.grid.n_cells();
    let nblk = ps.grid.n_corners();
    let nm = ps.n_dirs();
    let mut out = intensity.to_vec();
    out.par_chunks_mut(nblk).enumerate().for_each(|(k, blk)| {
        let g = k / nm;
        for i in 0..nc {
            let inv = 1.0 / pc[g * nc + i];
            for v in &mut blk[4 * i..4 * i + 4] {
                *v *= inv;
            }
        }
    });
    Ok(out)
}

/// Normalizes a snapshot by its cell-average zeroth moments, rejecting fields
/// whose zeroth moment falls below [`PHI_FLOOR`].
pub fn normalize_snapshot(ps: &PhaseSpace, intensity: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    check_len("zeroth moments", ps.phi_dim(), phi.len())?;
    let nc = ps.grid.n_cells();
    let npg = ps.phi_per_group();
    for g in 0..ps.n_groups() {
        for i in 0..nc {
            let p = phi[g * npg + i];
            if !(p >= PHI_FLOOR) {
                return Err(TrtError::InvalidArgument(format!(
                    "zeroth moment {p:e} below floor in group {g}, cell {i}"
                )));
            }
        }
    }
    normalize_with_floor(ps, intensity, phi)
}

/// Largest deviation of the cell-average angular integral of `ibar` from one.
pub fn normalization_drift(ps: &PhaseSpace, ibar: &[f64]) -> f64 {
    let nc = ps.grid.n_cells();
    let mut sums = vec![0.0; nc * ps.n_groups()];
    for g in 0..ps.n_groups() {
        for m in 0..ps.n_dirs() {
            let w = ps.quad.weights[m];
            let b = ps.block(g, m);
            for i in 0..nc {
                let s: f64 = ibar[b + 4 * i..b + 4 * i + 4].iter().sum();
                sums[g * nc + i] += 0.25 * w * s;
            }
        }
    }
    sums.iter().fold(0.0, |a, s| a.max((s - 1.0).abs()))
}

/// Discrete NBTE operators for one time step and fixed material state.
pub struct NbteOperators<'a> {
    ps: &'a PhaseSpace,
    bc: &'a BoundaryCondition,
    kappa: Vec<f64>,
    planck: Vec<f64>,
    phi_c: Vec<f64>,
    /// `phi_c^{n-1} / phi_c^n`.
    lag_ratio: Vec<f64>,
    inv_cdt: f64,
}

impl<'a> NbteOperators<'a> {
    pub fn new(
        ps: &'a PhaseSpace,
        bc: &'a BoundaryCondition,
        mat: &CellMaterial,
        phi_n: &[f64],
        phi_prev: &[f64],
        dt: f64,
        c: f64,
    ) -> Result<Self> {
        check_len("current zeroth moments", ps.phi_dim(), phi_n.len())?;
        check_len("previous zeroth moments", ps.phi_dim(), phi_prev.len())?;
        check_len("material cells", ps.grid.n_cells(), mat.n_cells)?;
        if !(dt > 0.0) {
            return Err(TrtError::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let phi_c = cell_phi(ps, phi_n);
        let prev = cell_phi(ps, phi_prev);
        let lag_ratio = prev.iter().zip(&phi_c).map(|(a, b)| a / b).collect();
        Ok(NbteOperators {
            ps,
            bc,
            kappa: mat.kappa.clone(),
            planck: mat.planck.clone(),
            phi_c,
            lag_ratio,
            inv_cdt: 1.0 / (c * dt),
        })
    }

    pub fn phase_space(&self) -> &PhaseSpace {
        self.ps
    }

    /// Row scaling: `1/kappa` for the scaled form, `1` for the plain form.
    #[inline]
    fn row_scale(&self, scaled: bool, g: usize, i: usize) -> f64 {
        if scaled {
            1.0 / self.kappa[g * self.ps.grid.n_cells() + i]
        } else {
            1.0
        }
    }

    /// Applies `(T + L_bar)` in either scaling to one `(g, m)` block.
    fn apply_block(&self, scaled: bool, g: usize, m: usize, x: &[f64], y: &mut [f64]) {
        let grid = &self.ps.grid;
        let nc = grid.n_cells();
        let om = &self.ps.quad.dirs[m];
        for i in 0..nc {
            let s = grid.corner_area(i, 0);
            let k = self.kappa[g * nc + i];
            let rs = self.row_scale(scaled, g, i);
            let pc = self.phi_c[g * nc + i];
            for alpha in 0..4 {
                let mut acc = (s * self.inv_cdt + k * s) * x[4 * i + alpha];
                for &(side, _) in &CORNER_OUTER[alpha] {
                    let n = side.normal();
                    let w = (om[0] * n[0] + om[1] * n[1]) * grid.half_edge_length(side);
                    if w > 0.0 {
                        acc += w * x[4 * i + alpha];
                    } else if let Some((j, beta)) = grid.corner_neighbor(i, alpha, side) {
                        acc += w * self.phi_c[g * nc + j] / pc * x[4 * j + beta];
                    }
                }
                for &(beta, n) in &CORNER_INNER[alpha] {
                    let w = 0.5 * (om[0] * n[0] + om[1] * n[1]) * grid.inner_edge_length(n);
                    acc += w * (x[4 * i + alpha] + x[4 * i + beta]);
                }
                y[4 * i + alpha] = rs * acc;
            }
        }
    }

    fn apply_impl_into(&self, scaled: bool, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len("operator operand", self.ps.dim(), x.len())?;
        check_len("operator output", self.ps.dim(), y.len())?;
        let nblk = self.ps.grid.n_corners();
        let nm = self.ps.n_dirs();
        y.par_chunks_mut(nblk)
            .zip(x.par_chunks(nblk))
            .enumerate()
            .for_each(|(k, (yb, xb))| self.apply_block(scaled, k / nm, k % nm, xb, yb));
        Ok(())
    }

    fn apply_impl(&self, scaled: bool, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; x.len()];
        self.apply_impl_into(scaled, x, &mut y)?;
        Ok(y)
    }

    /// `apply` writing into `y`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply_impl_into(true, x, y)
    }

    /// `(T + L_bar) x` in the opacity-scaled form.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_impl(true, x)
    }

    fn lagged_impl(&self, scaled: bool, x: &[f64]) -> Result<Vec<f64>> {
        check_len("lagged operand", self.ps.dim(), x.len())?;
        let nc = self.ps.grid.n_cells();
        let nm = self.ps.n_dirs();
        let nblk = self.ps.grid.n_corners();
        let mut y = vec![0.0; x.len()];
        y.par_chunks_mut(nblk)
            .zip(x.par_chunks(nblk))
            .enumerate()
            .for_each(|(k, (yb, xb))| {
                let g = k / nm;
                for i in 0..nc {
                    let s = self.ps.grid.corner_area(i, 0);
                    let f = self.row_scale(scaled, g, i) * s * self.inv_cdt * self.lag_ratio[g * nc + i];
                    for a in 0..4 {
                        yb[4 * i + a] = f * xb[4 * i + a];
                    }
                }
            });
        Ok(y)
    }

    /// `T_bar x`, the lagged time-derivative term.
    pub fn apply_lagged(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.lagged_impl(true, x)
    }

    fn source_impl(&self, scaled: bool) -> Vec<f64> {
        let ps = self.ps;
        let grid = &ps.grid;
        let nc = grid.n_cells();
        let nm = ps.n_dirs();
        let mut q = vec![0.0; ps.dim()];
        q.par_chunks_mut(grid.n_corners()).enumerate().for_each(|(k, qb)| {
            let (g, m) = (k / nm, k % nm);
            let om = &ps.quad.dirs[m];
            for i in 0..nc {
                let s = grid.corner_area(i, 0);
                let kap = self.kappa[g * nc + i];
                let pc = self.phi_c[g * nc + i];
                let rs = self.row_scale(scaled, g, i);
                for alpha in 0..4 {
                    let mut acc = kap * s * self.planck[g * nc + i] / pc;
                    for &(side, _) in &CORNER_OUTER[alpha] {
                        if grid.corner_neighbor(i, alpha, side).is_some() {
                            continue;
                        }
                        let n = side.normal();
                        let w = (om[0] * n[0] + om[1] * n[1]) * grid.half_edge_length(side);
                        if w <= 0.0 {
                            acc -= w * self.bc.get(side, g, m) / pc;
                        }
                    }
                    qb[4 * i + alpha] = rs * acc;
                }
            }
        });
        q
    }

    /// Normalized Planckian source including boundary inflow, scaled form.
    pub fn source(&self) -> Vec<f64> {
        self.source_impl(true)
    }

    fn residual_impl(&self, scaled: bool, current: &[f64], lagged: &[f64]) -> Result<Vec<f64>> {
        let a = self.apply_impl(scaled, current)?;
        let t = self.lagged_impl(scaled, lagged)?;
        let q = self.source_impl(scaled);
        Ok(a.iter().zip(&t).zip(&q).map(|((a, t), q)| a - t - q).collect())
    }

    /// `R = T current - T_bar lagged + L_bar current - Q_bar`, scaled by `1/kappa`.
    pub fn residual(&self, current: &[f64], lagged: &[f64]) -> Result<Vec<f64>> {
        self.residual_impl(true, current, lagged)
    }

    /// Residual of the unscaled normalized corner-balance equations.
    pub fn residual_unscaled(&self, current: &[f64], lagged: &[f64]) -> Result<Vec<f64>> {
        self.residual_impl(false, current, lagged)
    }

    /// Opacity of the cell owning phase-space entry `d`.
    pub fn kappa_at(&self, d: usize) -> f64 {
        let nc = self.ps.grid.n_cells();
        let blk = d / self.ps.grid.n_corners();
        let g = blk / self.ps.n_dirs();
        let i = (d % self.ps.grid.n_corners()) / 4;
        self.kappa[g * nc + i]
    }
}
