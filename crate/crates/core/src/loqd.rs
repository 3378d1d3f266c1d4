//! Low-order quasidiffusion: the finite-volume moment system per group, its
//! grey collapse, and the coupled grey + material-energy Newton solve.
//!
//! Unknowns per system are cell energy densities `E_c`, face energy
//! densities `E_f` and face-normal fluxes `F_f`. Equations are the cell
//! balance and one first-moment equation per half-cell; boundary faces
//! close with `n.F = c beta E + 2 F_in`.

use crate::anderson::Anderson;
use crate::banded::BandMatrix;
use crate::closures::{BoundaryMoments, ClosureSet, XX, XY, YY};
use crate::error::{check_len, Result, TrtError};
use crate::material::{CellMaterial, MaterialModel, TEMPERATURE_FLOOR};
use crate::phase_space::{PhaseSpace, Side, SpatialGrid};
use crate::transport::{side_index, TransportMoments};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Energy density and normal flux grid functions of one system.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentField {
    pub e_cell: Vec<f64>,
    pub e_face: Vec<f64>,
    pub f_face: Vec<f64>,
}

impl MomentField {
    pub fn zeros(grid: &SpatialGrid) -> Self {
        MomentField {
            e_cell: vec![0.0; grid.n_cells()],
            e_face: vec![0.0; grid.n_faces()],
            f_face: vec![0.0; grid.n_faces()],
        }
    }

    /// Group fields from transport moments, `E = phi / c`.
    pub fn from_transport(ps: &PhaseSpace, tm: &TransportMoments, g: usize, c: f64) -> Self {
        let nf = ps.grid.n_faces();
        MomentField {
            e_cell: tm.phi_cell(ps, g).iter().map(|p| p / c).collect(),
            e_face: tm.phi_face(ps, g).iter().map(|p| p / c).collect(),
            f_face: tm.face_flux[g * nf..(g + 1) * nf].to_vec(),
        }
    }

    pub fn sum(fields: &[MomentField]) -> Self {
        let mut out = fields[0].clone();
        for f in &fields[1..] {
            for (a, b) in out.e_cell.iter_mut().zip(&f.e_cell) {
                *a += b;
            }
            for (a, b) in out.e_face.iter_mut().zip(&f.e_face) {
                *a += b;
            }
            for (a, b) in out.f_face.iter_mut().zip(&f.f_face) {
                *a += b;
            }
        }
        out
    }
}

/// Coefficients of one FV moment system.
#[derive(Clone, Debug)]
pub struct FvSystem {
    /// Absorption rate in the cell balance, multiplies `E_c`.
    pub cell_abs: Vec<f64>,
    /// Emission source in the cell balance.
    pub cell_src: Vec<f64>,
    /// First-moment removal per half-cell `[i * 4 + side]`.
    pub half_abs: Vec<f64>,
    /// Compensation coefficient per half-cell, multiplies the face `E`.
    pub half_eta: Vec<f64>,
    /// Tensors at cells and faces (xx, yy, zz, xy).
    pub f_cell: Vec<[f64; 4]>,
    pub f_face: Vec<[f64; 4]>,
    /// Boundary factor per face (unused on interior faces).
    pub beta: Vec<f64>,
    /// Incoming partial current per face (unused on interior faces).
    pub f_in: Vec<f64>,
}

/// Index map of FV unknowns, ordered row by row to keep the band narrow.
#[derive(Clone, Copy, Debug)]
pub struct FvLayout {
    nx: usize,
    ny: usize,
    nv: usize,
}

impl FvLayout {
    pub fn new(grid: &SpatialGrid) -> Self {
        FvLayout {
            nx: grid.nx,
            ny: grid.ny,
            nv: grid.n_vfaces(),
        }
    }

    pub fn len(&self) -> usize {
        let x = self.nx * self.ny;
        5 * x + 2 * self.nx + 2 * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    fn row_base(&self, iy: usize) -> usize {
        iy * (5 * self.nx + 2)
    }

    #[inline]
    pub fn cell(&self, i: usize) -> usize {
        let (ix, iy) = (i % self.nx, i / self.nx);
        self.row_base(iy) + 2 * self.nx + 3 * ix + 2
    }

    /// Index of the face energy density; the flux follows at `+1`.
    #[inline]
    pub fn face(&self, f: usize) -> usize {
        if f < self.nv {
            let (ix, iy) = (f % (self.nx + 1), f / (self.nx + 1));
            self.row_base(iy) + 2 * self.nx + 3 * ix
        } else {
            let h = f - self.nv;
            let (ix, iy) = (h % self.nx, h / self.nx);
            self.row_base(iy) + 2 * ix
        }
    }
}

#[inline]
fn side_sign(side: Side) -> f64 {
    match side {
        Side::Right | Side::Top => 1.0,
        Side::Left | Side::Bottom => -1.0,
    }
}

/// Row/column/value triplets of the FV operator, the right-hand side.
fn assemble(
    grid: &SpatialGrid,
    sys: &FvSystem,
    old: &MomentField,
    dt: f64,
    c: f64,
) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
    let lay = FvLayout::new(grid);
    let n = lay.len();
    let mut t = Vec::with_capacity(16 * n);
    let mut rhs = vec![0.0; n];
    let inv_dt = 1.0 / dt;
    let inv_cdt = 1.0 / (c * dt);
    for i in 0..grid.n_cells() {
        let r = lay.cell(i);
        t.push((r, r, inv_dt + sys.cell_abs[i]));
        for side in Side::ALL {
            let f = grid.cell_face(i, side);
            let h = if side.is_vertical() { grid.dx } else { grid.dy };
            t.push((r, lay.face(f) + 1, side_sign(side) / h));
        }
        rhs[r] = sys.cell_src[i] + inv_dt * old.e_cell[i];

        for side in Side::ALL {
            let f = grid.cell_face(i, side);
            let (lo, _) = grid.face_cells(f);
            // The low cell's equation sits on the E row of the face, the
            // high cell's on the F row.
            let row = if lo == Some(i) { lay.face(f) } else { lay.face(f) + 1 };
            let sg = side_sign(side);
            let (hn, ht, nn, tplus, tminus) = if side.is_vertical() {
                (grid.dx, grid.dy, XX, Side::Top, Side::Bottom)
            } else {
                (grid.dy, grid.dx, YY, Side::Right, Side::Left)
            };
            let ef = lay.face(f);
            let k = i * 4 + side_index(side);
            t.push((row, ef + 1, inv_cdt + sys.half_abs[k]));
            t.push((row, ef, sg * 2.0 * c / hn * sys.f_face[f][nn] + sys.half_eta[k]));
            t.push((row, lay.cell(i), -sg * 2.0 * c / hn * sys.f_cell[i][nn]));
            let fp = grid.cell_face(i, tplus);
            let fm = grid.cell_face(i, tminus);
            t.push((row, lay.face(fp), c / ht * sys.f_face[fp][XY]));
            t.push((row, lay.face(fm), -c / ht * sys.f_face[fm][XY]));
            rhs[row] = inv_cdt * old.f_face[f];
        }
    }
    for f in 0..grid.n_faces() {
        if let Some(side) = grid.boundary_side(f) {
            let (lo, _) = grid.face_cells(f);
            let row = if lo.is_some() { lay.face(f) + 1 } else { lay.face(f) };
            let ef = lay.face(f);
            t.push((row, ef + 1, side_sign(side)));
            t.push((row, ef, -c * sys.beta[f]));
            rhs[row] = 2.0 * sys.f_in[f];
        }
    }
    (t, rhs)
}

/// Solves one backward-Euler FV moment system.
pub fn solve_fv(grid: &SpatialGrid, sys: &FvSystem, old: &MomentField, dt: f64, c: f64) -> Result<MomentField> {
    check_len("cell coefficients", grid.n_cells(), sys.cell_abs.len())?;
    check_len("face tensors", grid.n_faces(), sys.f_face.len())?;
    let (t, rhs) = assemble(grid, sys, old, dt, c);
    let lay = FvLayout::new(grid);
    let x = BandMatrix::from_triplets(lay.len(), &t).solve(&rhs)?;
    let mut out = MomentField::zeros(grid);
    for i in 0..grid.n_cells() {
        out.e_cell[i] = x[lay.cell(i)];
    }
    for f in 0..grid.n_faces() {
        out.e_face[f] = x[lay.face(f)];
        out.f_face[f] = x[lay.face(f) + 1];
    }
    Ok(out)
}

/// Equation residuals `A x - b` of an FV system at a given field, in layout order.
pub fn fv_residual(
    grid: &SpatialGrid,
    sys: &FvSystem,
    old: &MomentField,
    sol: &MomentField,
    dt: f64,
    c: f64,
) -> Vec<f64> {
    let (t, rhs) = assemble(grid, sys, old, dt, c);
    let lay = FvLayout::new(grid);
    let mut x = vec![0.0; lay.len()];
    for i in 0..grid.n_cells() {
        x[lay.cell(i)] = sol.e_cell[i];
    }
    for f in 0..grid.n_faces() {
        x[lay.face(f)] = sol.e_face[f];
        x[lay.face(f) + 1] = sol.f_face[f];
    }
    let mut r: Vec<f64> = rhs.iter().map(|v| -v).collect();
    for (row, col, v) in t {
        r[row] += v * x[col];
    }
    r
}

/// Boundary incoming partial current of group `g` on every face.
fn face_incoming(grid: &SpatialGrid, bm: &BoundaryMoments, g: usize) -> Vec<f64> {
    (0..grid.n_faces())
        .map(|f| grid.boundary_side(f).map_or(0.0, |s| bm.current[side_index(s)][g]))
        .collect()
}

/// Group `g` system at fixed material state.
pub fn mg_system(
    ps: &PhaseSpace,
    mat: &CellMaterial,
    closures: &ClosureSet,
    bm: &BoundaryMoments,
    g: usize,
    c: f64,
) -> FvSystem {
    let grid = &ps.grid;
    let (nc, nf) = (grid.n_cells(), grid.n_faces());
    let mut half_abs = vec![0.0; 4 * nc];
    for i in 0..nc {
        half_abs[4 * i..4 * i + 4].fill(mat.kappa(g, i));
    }
    FvSystem {
        cell_abs: (0..nc).map(|i| c * mat.kappa(g, i)).collect(),
        cell_src: (0..nc).map(|i| 4.0 * PI * mat.kappa(g, i) * mat.planck(g, i)).collect(),
        half_abs,
        half_eta: vec![0.0; 4 * nc],
        f_cell: closures.cell[g * nc..(g + 1) * nc].to_vec(),
        f_face: closures.face[g * nf..(g + 1) * nf].to_vec(),
        beta: closures.beta[g * nf..(g + 1) * nf].to_vec(),
        f_in: face_incoming(grid, bm, g),
    }
}

/// Solves every group's FV system; groups are independent.
pub fn solve_mg_loqd(
    ps: &PhaseSpace,
    mat: &CellMaterial,
    closures: &ClosureSet,
    bm: &BoundaryMoments,
    prev: &[MomentField],
    dt: f64,
    c: f64,
) -> Result<Vec<MomentField>> {
    check_len("previous group fields", ps.n_groups(), prev.len())?;
    if !(dt > 0.0) {
        return Err(TrtError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    (0..ps.n_groups())
        .into_par_iter()
        .map(|g| solve_fv(&ps.grid, &mg_system(ps, mat, closures, bm, g, c), &prev[g], dt, c))
        .collect()
}

/// Spectrum-averaged coefficients of the effective grey system.
#[derive(Clone, Debug, PartialEq)]
pub struct GreyCoefficients {
    pub kappa_e: Vec<f64>,
    pub kappa_b: Vec<f64>,
    /// Flux-weighted opacity per half-cell `[i * 4 + side]`.
    pub kappa_f: Vec<f64>,
    /// Compensation coefficient per half-cell.
    pub eta: Vec<f64>,
    pub f_cell: Vec<[f64; 4]>,
    pub f_face: Vec<[f64; 4]>,
    pub beta: Vec<f64>,
    pub f_in: Vec<f64>,
}

/// Flux sums below this magnitude make the flux-weighted opacity fall back
/// to the energy-weighted one.
pub const FLUX_FALLBACK: f64 = 1.0e-25;

#[inline]
fn weighted_mean(num: f64, den: f64, fallback: f64) -> f64 {
    if den.abs() > 0.0 && (num / den).is_finite() {
        num / den
    } else {
        fallback
    }
}

/// Collapses the group solution into grey coefficients.
pub fn grey_collapse(
    ps: &PhaseSpace,
    mg: &[MomentField],
    mat: &CellMaterial,
    closures: &ClosureSet,
    bm: &BoundaryMoments,
) -> GreyCoefficients {
    let grid = &ps.grid;
    let (ng, nc, nf) = (ps.n_groups(), grid.n_cells(), grid.n_faces());
    let mut gc = GreyCoefficients {
        kappa_e: vec![0.0; nc],
        kappa_b: vec![0.0; nc],
        kappa_f: vec![0.0; 4 * nc],
        eta: vec![0.0; 4 * nc],
        f_cell: vec![[0.0; 4]; nc],
        f_face: vec![[0.0; 4]; nf],
        beta: vec![0.0; nf],
        f_in: vec![0.0; nf],
    };
    let mean_kappa = |i: usize| (0..ng).map(|g| mat.kappa(g, i)).sum::<f64>() / ng as f64;
    for i in 0..nc {
        let (mut ke, mut e, mut kb, mut b) = (0.0, 0.0, 0.0, 0.0);
        let mut fe = [0.0; 4];
        for g in 0..ng {
            let eg = mg[g].e_cell[i];
            ke += mat.kappa(g, i) * eg;
            e += eg;
            kb += mat.kappa(g, i) * mat.planck(g, i);
            b += mat.planck(g, i);
            for k in 0..4 {
                fe[k] += closures.cell[g * nc + i][k] * eg;
            }
        }
        gc.kappa_e[i] = weighted_mean(ke, e, mean_kappa(i));
        gc.kappa_b[i] = weighted_mean(kb, b, mean_kappa(i));
        for k in 0..4 {
            gc.f_cell[i][k] = weighted_mean(fe[k], e, closures.cell[i][k]);
        }
    }
    for f in 0..nf {
        let mut e = 0.0;
        let mut fe = [0.0; 4];
        let mut be = 0.0;
        for g in 0..ng {
            let eg = mg[g].e_face[f];
            e += eg;
            for k in 0..4 {
                fe[k] += closures.face[g * nf + f][k] * eg;
            }
            be += closures.beta[g * nf + f] * eg;
        }
        for k in 0..4 {
            gc.f_face[f][k] = weighted_mean(fe[k], e, closures.face[f][k]);
        }
        if let Some(side) = grid.boundary_side(f) {
            gc.beta[f] = weighted_mean(be, e, closures.beta[f]);
            gc.f_in[f] = (0..ng).map(|g| bm.current[side_index(side)][g]).sum();
        }
    }
    for i in 0..nc {
        for side in Side::ALL {
            let f = grid.cell_face(i, side);
            let k = 4 * i + side_index(side);
            let (mut kf, mut af, mut e) = (0.0, 0.0, 0.0);
            for g in 0..ng {
                let fg = mg[g].f_face[f];
                kf += mat.kappa(g, i) * fg.abs();
                af += fg.abs();
                e += mg[g].e_face[f];
            }
            let kbar = if af < FLUX_FALLBACK {
                gc.kappa_e[i]
            } else {
                kf / af
            };
            gc.kappa_f[k] = kbar;
            let comp: f64 = (0..ng).map(|g| (mat.kappa(g, i) - kbar) * mg[g].f_face[f]).sum();
            gc.eta[k] = weighted_mean(comp, e, 0.0);
        }
    }
    gc
}

/// Grey system with the material coupling linearized about `t_k`.
#[allow(clippy::too_many_arguments)]
fn grey_system(
    grid: &SpatialGrid,
    gc: &GreyCoefficients,
    material: &MaterialModel,
    t_old: &[f64],
    t_k: &[f64],
    dt: f64,
) -> (FvSystem, Vec<f64>, Vec<f64>) {
    let c = material.c;
    let a = material.a_r;
    let nc = grid.n_cells();
    let mut cell_abs = vec![0.0; nc];
    let mut cell_src = vec![0.0; nc];
    let mut denom = vec![0.0; nc];
    let mut base = vec![0.0; nc];
    for i in 0..nc {
        let tk = t_k[i];
        let emis4 = c * gc.kappa_b[i] * a * tk.powi(4);
        let d = material.cv / dt + 4.0 * emis4 / tk;
        let nu = 4.0 * emis4 / tk / d;
        let b = material.cv * t_old[i] / dt + 3.0 * emis4;
        cell_abs[i] = c * gc.kappa_e[i] * (1.0 - nu);
        cell_src[i] = nu * b - 3.0 * emis4;
        denom[i] = d;
        base[i] = b;
    }
    let sys = FvSystem {
        cell_abs,
        cell_src,
        half_abs: gc.kappa_f.clone(),
        half_eta: gc.eta.clone(),
        f_cell: gc.f_cell.clone(),
        f_face: gc.f_face.clone(),
        beta: gc.beta.clone(),
        f_in: gc.f_in.clone(),
    };
    (sys, denom, base)
}

pub const NEWTON_MAX_ITERS: usize = 50;
pub const NEWTON_TOL: f64 = 1.0e-14;

/// Result of the coupled grey + material solve.
#[derive(Clone, Debug)]
pub struct GreySolution {
    pub temperature: Vec<f64>,
    pub grey: MomentField,
    pub newton_iterations: usize,
}

pub(crate) fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut n = 0.0;
    for (a, b) in new.iter().zip(old) {
        d += (a - b) * (a - b);
        n += a * a;
    }
    if n == 0.0 {
        d.sqrt()
    } else {
        (d / n).sqrt()
    }
}

/// Newton iteration on the grey moment system coupled with the material
/// energy balance, grey coefficients frozen.
#[allow(clippy::too_many_arguments)]
pub fn solve_grey_meb(
    grid: &SpatialGrid,
    gc: &GreyCoefficients,
    material: &MaterialModel,
    t_old: &[f64],
    grey_old: &MomentField,
    t_start: &[f64],
    dt: f64,
) -> Result<GreySolution> {
    check_len("old temperature", grid.n_cells(), t_old.len())?;
    let mut t = t_start.to_vec();
    let mut e_prev: Option<Vec<f64>> = None;
    let mut last = f64::INFINITY;
    // Convergence needs two consecutive energy iterates, so the first
    // iteration can only exit when the temperature is exactly reproduced.
    for it in 1..=NEWTON_MAX_ITERS {
        let (sys, denom, base) = grey_system(grid, gc, material, t_old, &t, dt);
        let sol = solve_fv(grid, &sys, grey_old, dt, material.c)?;
        let t_new: Vec<f64> = (0..grid.n_cells())
            .map(|i| {
                ((base[i] + material.c * gc.kappa_e[i] * sol.e_cell[i]) / denom[i])
                    .max(TEMPERATURE_FLOOR)
            })
            .collect();
        let dt_rel = rel_change(&t_new, &t);
        let de_rel = e_prev.as_ref().map_or(0.0, |e| rel_change(&sol.e_cell, e));
        t = t_new;
        last = dt_rel.max(de_rel);
        if dt_rel <= NEWTON_TOL && (de_rel <= NEWTON_TOL || dt_rel == 0.0) {
            return Ok(GreySolution {
                temperature: t,
                grey: sol,
                newton_iterations: it,
            });
        }
        e_prev = Some(sol.e_cell);
    }
    Err(TrtError::Convergence {
        stage: "grey Newton",
        iterations: NEWTON_MAX_ITERS,
        residual: last,
    })
}

/// Converged state of the low-order problem.
#[derive(Clone, Debug)]
pub struct InnerState {
    pub temperature: Vec<f64>,
    pub mg: Vec<MomentField>,
    pub grey: MomentField,
    pub iterations: usize,
}

/// Everything a time step needs from the previous one.
#[derive(Clone, Debug)]
pub struct LowOrderPrev<'a> {
    pub temperature: &'a [f64],
    pub mg: &'a [MomentField],
    pub grey: &'a MomentField,
}

pub const INNER_MAX_ITERS: usize = 200;

/// History length of the Anderson mixing applied to the inner temperature
/// iterates.
pub const INNER_MIXING_DEPTH: usize = 6;

/// Inner iterations: group solves, grey collapse and grey Newton until
/// temperature and grey cell energy stop changing.
///
/// The map from a temperature estimate to the grey Newton temperature
/// contracts slowly when opacities vary strongly across groups, so the
/// iterates are Anderson-mixed; the fixed point is unchanged.
#[allow(clippy::too_many_arguments)]
pub fn inner_iterate(
    ps: &PhaseSpace,
    material: &MaterialModel,
    closures: &ClosureSet,
    bm: &BoundaryMoments,
    prev: &LowOrderPrev<'_>,
    t_guess: &[f64],
    e_guess: &[f64],
    dt: f64,
    eps: f64,
) -> Result<InnerState> {
    let mut t = t_guess.to_vec();
    let mut e = e_guess.to_vec();
    let mut last = f64::INFINITY;
    let mut mixer = Anderson::new(INNER_MIXING_DEPTH);
    for p in 1..=INNER_MAX_ITERS {
        let mat = material.evaluate(&ps.groups, &t);
        let mg = solve_mg_loqd(ps, &mat, closures, bm, prev.mg, dt, material.c)?;
        let gc = grey_collapse(ps, &mg, &mat, closures, bm);
        let gs = solve_grey_meb(&ps.grid, &gc, material, prev.temperature, prev.grey, &t, dt)?;
        let dtr = rel_change(&gs.temperature, &t);
        let der = rel_change(&gs.grey.e_cell, &e);
        last = dtr.max(der);
        log::trace!("inner {p}: dT {dtr:.3e} dE {der:.3e} newton {}", gs.newton_iterations);
        e = gs.grey.e_cell.clone();
        if dtr <= eps && der <= eps {
            return Ok(InnerState {
                temperature: gs.temperature,
                mg,
                grey: gs.grey,
                iterations: p,
            });
        }
        let mixed = mixer.next(&t, &gs.temperature);
        t = if mixed.iter().all(|v| v.is_finite() && *v >= TEMPERATURE_FLOOR) {
            mixed
        } else {
            mixer.reset();
            gs.temperature
        };
    }
    Err(TrtError::Convergence {
        stage: "inner iterations",
        iterations: INNER_MAX_ITERS,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::material::SPEED_OF_LIGHT as C;
    use crate::problem::Problem;
    use crate::testing::{random_material, space, uniform_material};
    use crate::transport::BoundaryCondition;
    use nalgebra::{Matrix3, Vector3};

    const THIRD: [f64; 4] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0];

    fn driven_problem(t_drive: f64) -> Problem {
        let mut p = Problem::from_config(&RunConfig::ci()).unwrap();
        let b: Vec<f64> = (0..p.ps.n_groups())
            .map(|g| p.material.planck_group(&p.ps.groups, g, t_drive))
            .collect();
        let mut bc = BoundaryCondition::vacuum(&p.ps);
        for side in Side::ALL {
            bc.set_isotropic(side, &b);
        }
        p.bm = BoundaryMoments::new(&p.ps, &bc);
        p.bc = bc;
        p
    }

    #[test]
    fn single_cell_matches_reduced_symmetric_system() {
        let h = 0.4;
        let grid = SpatialGrid::new(1, 1, h, h).unwrap();
        let (kappa, src, beta, f_in, dt, e_old) = (2.5, 3.0, 0.45, -0.8, 0.01, 0.2);
        let nf = grid.n_faces();
        let sys = FvSystem {
            cell_abs: vec![C * kappa],
            cell_src: vec![src],
            half_abs: vec![kappa; 4],
            half_eta: vec![0.0; 4],
            f_cell: vec![THIRD],
            f_face: vec![THIRD; nf],
            beta: vec![beta; nf],
            f_in: vec![f_in; nf],
        };
        let mut old = MomentField::zeros(&grid);
        old.e_cell[0] = e_old;
        let sol = solve_fv(&grid, &sys, &old, dt, C).unwrap();

        // By symmetry all faces share E_f and an outward flux F.
        let k = 2.0 * C / h / 3.0;
        let a = Matrix3::new(
            1.0 / dt + C * kappa, 0.0, 4.0 / h,
            -k, k, 1.0 / (C * dt) + kappa,
            0.0, -C * beta, 1.0,
        );
        let x = a.lu().solve(&Vector3::new(src + e_old / dt, 0.0, 2.0 * f_in)).unwrap();
        assert!((sol.e_cell[0] - x[0]).abs() < 1e-12 * x[0].abs());
        for f in 0..nf {
            assert!((sol.e_face[f] - x[1]).abs() < 1e-12 * x[1].abs());
            let outward = match grid.boundary_side(f).unwrap() {
                Side::Right | Side::Top => sol.f_face[f],
                Side::Left | Side::Bottom => -sol.f_face[f],
            };
            assert!((outward - x[2]).abs() < 1e-12 * x[2].abs());
        }
        let r = fv_residual(&grid, &sys, &old, &sol, dt, C);
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn one_group_collapse_is_identity() {
        let ps = space(2, 2, 1, 1, &[1.0e3]);
        let nc = ps.grid.n_cells();
        let mat = random_material(nc, 1, 4);
        let closures = ClosureSet::isotropic(&ps);
        let mut bc = BoundaryCondition::vacuum(&ps);
        bc.set_isotropic(Side::Left, &[1.0]);
        let bm = BoundaryMoments::new(&ps, &bc);
        let prev = vec![MomentField::zeros(&ps.grid)];
        let mg = solve_mg_loqd(&ps, &mat, &closures, &bm, &prev, 0.1, C).unwrap();
        let gc = grey_collapse(&ps, &mg, &mat, &closures, &bm);
        for i in 0..nc {
            let k = mat.kappa(0, i);
            assert!((gc.kappa_e[i] - k).abs() < 1e-14 * k);
            assert!((gc.kappa_b[i] - k).abs() < 1e-14 * k);
            for s in 0..4 {
                assert!((gc.kappa_f[4 * i + s] - mat.kappa(0, i)).abs() < 1e-14 * mat.kappa(0, i));
                assert!(gc.eta[4 * i + s].abs() < 1e-13);
            }
        }
        assert_eq!(gc.f_face, closures.face);
        for f in 0..ps.grid.n_faces() {
            if ps.grid.boundary_side(f).is_some() {
                assert!((gc.beta[f] - closures.beta[f]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_group_weights_by_hand() {
        let ps = space(1, 1, 1, 1, &[1.0, 2.0]);
        let mat = uniform_material(1, &[10.0, 1.0], &[0.2, 0.6]);
        let closures = ClosureSet::isotropic(&ps);
        let bm = BoundaryMoments::new(&ps, &BoundaryCondition::vacuum(&ps));
        let nf = ps.grid.n_faces();
        let field = |e: f64, flux: f64| MomentField {
            e_cell: vec![e],
            e_face: vec![e; nf],
            f_face: vec![flux; nf],
        };
        let mg = [field(1.0, 0.5), field(3.0, -1.0)];
        let gc = grey_collapse(&ps, &mg, &mat, &closures, &bm);
        assert!((gc.kappa_e[0] - (10.0 * 1.0 + 1.0 * 3.0) / 4.0).abs() < 1e-14);
        assert!((gc.kappa_b[0] - (10.0 * 0.2 + 0.6) / 0.8).abs() < 1e-14);
        let kbar = (10.0 * 0.5 + 1.0 * 1.0) / 1.5;
        let eta = ((10.0 - kbar) * 0.5 + (1.0 - kbar) * -1.0) / 4.0;
        for s in 0..4 {
            assert!((gc.kappa_f[s] - kbar).abs() < 1e-14);
            assert!((gc.eta[s] - eta).abs() < 1e-14);
        }
    }

    #[test]
    fn summed_groups_satisfy_grey_equations() {
        let ps = space(3, 2, 2, 1, &[1.0, 3.0, 9.0]);
        let nc = ps.grid.n_cells();
        let mat = random_material(nc, 3, 8);
        let closures = ClosureSet::isotropic(&ps);
        let mut bc = BoundaryCondition::vacuum(&ps);
        bc.set_isotropic(Side::Left, &[1.0, 0.4, 0.1]);
        let bm = BoundaryMoments::new(&ps, &bc);
        let prev: Vec<MomentField> = (0..3)
            .map(|g| {
                let mut f = MomentField::zeros(&ps.grid);
                f.e_cell.fill(0.01 * (g + 1) as f64);
                f
            })
            .collect();
        let dt = 0.05;
        let mg = solve_mg_loqd(&ps, &mat, &closures, &bm, &prev, dt, C).unwrap();
        let gc = grey_collapse(&ps, &mg, &mat, &closures, &bm);
        let sys = FvSystem {
            cell_abs: gc.kappa_e.iter().map(|k| C * k).collect(),
            cell_src: (0..nc)
                .map(|i| 4.0 * PI * gc.kappa_b[i] * (0..3).map(|g| mat.planck(g, i)).sum::<f64>())
                .collect(),
            half_abs: gc.kappa_f.clone(),
            half_eta: gc.eta.clone(),
            f_cell: gc.f_cell.clone(),
            f_face: gc.f_face.clone(),
            beta: gc.beta.clone(),
            f_in: gc.f_in.clone(),
        };
        let grey = MomentField::sum(&mg);
        let r = fv_residual(&ps.grid, &sys, &MomentField::sum(&prev), &grey, dt, C);
        let scale = grey.e_cell.iter().fold(0.0f64, |a, v| a.max(*v)) * C / dt;
        let worst = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-11 * scale, "residual {worst:e} against {scale:e}");
    }

    #[test]
    fn huge_heat_capacity_freezes_temperature() {
        let p = driven_problem(1.0);
        let material = p.material.clone().with_cv(p.material.cv * 1e6);
        let (rec, _) = p.initial_state();
        let t_old = vec![0.5; p.ps.grid.n_cells()];
        let mat = material.evaluate(&p.ps.groups, &t_old);
        let closures = ClosureSet::isotropic(&p.ps);
        let mg = solve_mg_loqd(&p.ps, &mat, &closures, &p.bm, &rec.mg, p.dt, C).unwrap();
        let gc = grey_collapse(&p.ps, &mg, &mat, &closures, &p.bm);
        let gs = solve_grey_meb(&p.ps.grid, &gc, &material, &t_old, &rec.grey, &t_old, p.dt).unwrap();
        for t in &gs.temperature {
            assert!((t - 0.5).abs() < 1e-5, "temperature moved to {t}");
        }
    }

    #[test]
    fn equilibrium_survives_inner_iterations() {
        let t_eq = 0.8;
        let mut p = driven_problem(t_eq);
        p.t0 = t_eq;
        let (rec, _) = p.initial_state();
        let prev = LowOrderPrev {
            temperature: &rec.temperature,
            mg: &rec.mg,
            grey: &rec.grey,
        };
        let closures = ClosureSet::isotropic(&p.ps);
        let st = inner_iterate(&p.ps, &p.material, &closures, &p.bm, &prev, &rec.temperature, &rec.grey.e_cell, p.dt, 1e-12)
            .unwrap();
        for t in &st.temperature {
            assert!((t - t_eq).abs() < 1e-10 * t_eq);
        }
        for (a, b) in st.grey.e_cell.iter().zip(&rec.grey.e_cell) {
            assert!((a - b).abs() < 1e-10 * b);
        }
    }

    #[test]
    fn inner_solution_is_consistent_across_levels() {
        let p = Problem::from_config(&RunConfig::ci()).unwrap();
        let (rec, _) = p.initial_state();
        let prev = LowOrderPrev {
            temperature: &rec.temperature,
            mg: &rec.mg,
            grey: &rec.grey,
        };
        let closures = ClosureSet::isotropic(&p.ps);
        let st = inner_iterate(&p.ps, &p.material, &closures, &p.bm, &prev, &rec.temperature, &rec.grey.e_cell, p.dt, 1e-12)
            .unwrap();
        assert!(st.iterations < INNER_MAX_ITERS);
        let sum = MomentField::sum(&st.mg);
        assert!(rel_change(&st.grey.e_cell, &sum.e_cell) < 1e-9);
        assert!(rel_change(&st.grey.f_face, &sum.f_face) < 1e-9);
        // The left boundary heats the first column.
        let g = &p.ps.grid;
        assert!(st.temperature[g.cell(0, 2)] > st.temperature[g.cell(g.nx - 1, 2)]);
        assert!(st.temperature.iter().all(|&t| t >= p.t0 * (1.0 - 1e-12)));
    }

    #[test]
    fn layout_covers_every_unknown_once() {
        let grid = SpatialGrid::new(3, 2, 1.0, 1.0).unwrap();
        let lay = FvLayout::new(&grid);
        let mut seen = vec![0; lay.len()];
        for i in 0..grid.n_cells() {
            seen[lay.cell(i)] += 1;
        }
        for f in 0..grid.n_faces() {
            seen[lay.face(f)] += 1;
            seen[lay.face(f) + 1] += 1;
        }
        assert!(seen.iter().all(|&n| n == 1));
    }
}
