//! Online stage: Petrov-Galerkin projection of the normalized transport
//! equation onto a POD basis, coupled to the shared low-order solver.

use crate::closures::{assemble_closures, ClosureSet};
use crate::error::{Result, TrtError};
use crate::nbte::{normalization_drift, normalize_with_floor, NbteOperators};
use crate::phase_space::{PhaseSpace, WeightMatrix};
use crate::pod::{check_descriptor, PodBasis};
use crate::problem::{outer_loop, HighOrder, Problem, RomDiagnostics, StepRecord, Trajectory};
use nalgebra::{DMatrix, DVector};

/// Test basis `psi_l = (T + L_bar) u_l`, stored as `W^{1/2}`-scaled columns.
#[derive(Clone, Debug)]
pub struct TestBasis {
    /// Column `l` holds `W^{1/2} psi_l`.
    pub weighted: DMatrix<f64>,
}

impl TestBasis {
    pub fn k(&self) -> usize {
        self.weighted.ncols()
    }

    /// `psi_l` without the weight scaling.
    pub fn column(&self, l: usize, w_sqrt: &[f64]) -> Vec<f64> {
        self.weighted.column(l).iter().zip(w_sqrt).map(|(x, s)| x / s).collect()
    }
}

pub fn build_test_basis(ops: &NbteOperators<'_>, u: &[Vec<f64>], w_sqrt: &[f64]) -> Result<TestBasis> {
    let mut m = DMatrix::zeros(ops.phase_space().dim(), u.len());
    fill_test_basis(ops, u, w_sqrt, &mut m)?;
    Ok(TestBasis { weighted: m })
}

/// Overwrites the columns of `m` with `W^{1/2} (T + L_bar) u_l`.
fn fill_test_basis(ops: &NbteOperators<'_>, u: &[Vec<f64>], w_sqrt: &[f64], m: &mut DMatrix<f64>) -> Result<()> {
    let d = ops.phase_space().dim();
    crate::error::check_len("test basis rows", d, m.nrows())?;
    crate::error::check_len("test basis columns", u.len(), m.ncols())?;
    if d == 0 {
        return Ok(());
    }
    for (col, ul) in m.as_mut_slice().chunks_mut(d).zip(u) {
        ops.apply_into(ul, col)?;
        for (c, s) in col.iter_mut().zip(w_sqrt) {
            *c *= s;
        }
    }
    Ok(())
}

/// Coefficients of one projected solve.
#[derive(Clone, Debug, PartialEq)]
pub struct RomCoefficients {
    pub lambda: Vec<f64>,
    /// `||R(U lambda)||_W` of the scaled residual.
    pub residual_norm: f64,
}

/// `a^T b` through a cache-blocked kernel. nalgebra's `tr_mul` does one full
/// column pass per output entry, which is far slower for tall matrices.
fn tr_mul_blocked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (d, m, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = DMatrix::zeros(m, n);
    if d == 0 || m == 0 || n == 0 {
        return c;
    }
    // SAFETY: the strides describe column-major storage of the given shapes,
    // and every buffer is exactly that size.
    unsafe {
        matrixmultiply::dgemm(
            m,
            d,
            n,
            1.0,
            a.as_ptr(),
            d as isize,
            1,
            b.as_ptr(),
            1,
            d as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

fn solve_dense(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or(TrtError::Singular("projected system"))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x.iter().copied().collect())
    } else {
        Err(TrtError::Singular("projected system"))
    }
}

/// Solves `Psi^T W (T + L_bar) U lambda = Psi^T W (T_bar U lambda_prev + Q_bar)`.
pub fn solve_projected(
    psi: &TestBasis,
    w: &WeightMatrix,
    ops: &NbteOperators<'_>,
    u: &[Vec<f64>],
    lambda_prev: &[f64],
) -> Result<RomCoefficients> {
    let k = psi.k();
    crate::error::check_len("previous coefficients", k, lambda_prev.len())?;
    let w_sqrt = w.sqrt();
    let mut prev = vec![0.0; w_sqrt.len()];
    for (l, ul) in u.iter().enumerate() {
        for (p, x) in prev.iter_mut().zip(ul) {
            *p += lambda_prev[l] * x;
        }
    }
    let lagged = ops.apply_lagged(&prev)?;
    let q = ops.source();
    let rhs_w = DVector::from_iterator(
        w_sqrt.len(),
        lagged.iter().zip(&q).zip(&w_sqrt).map(|((t, q), s)| (t + q) * s),
    );
    let m = tr_mul_blocked(&psi.weighted, &psi.weighted);
    let b = psi.weighted.tr_mul(&rhs_w);
    let lambda = solve_dense(m, b)?;
    let lam = DVector::from_column_slice(&lambda);
    let resid = &psi.weighted * lam - rhs_w;
    Ok(RomCoefficients {
        lambda,
        residual_norm: resid.norm(),
    })
}

/// Initial coefficients from `Psi^T W U lambda = Psi^T W I_bar^0`.
pub fn initial_coefficients(psi: &TestBasis, w: &WeightMatrix, u: &[Vec<f64>], ibar0: &[f64]) -> Result<Vec<f64>> {
    let w_sqrt = w.sqrt();
    let k = psi.k();
    let d = w_sqrt.len();
    let uw = DMatrix::from_fn(d, k, |i, l| u[l][i] * w_sqrt[i]);
    let iw = DVector::from_iterator(d, ibar0.iter().zip(&w_sqrt).map(|(x, s)| x * s));
    solve_dense(tr_mul_blocked(&psi.weighted, &uw), psi.weighted.tr_mul(&iw))
}

/// Closures from the superposed basis moments.
pub fn reconstruct_closures(
    ps: &PhaseSpace,
    basis: &PodBasis,
    lambda: &[f64],
    phi: &[f64],
    bm: &crate::closures::BoundaryMoments,
) -> Result<ClosureSet> {
    let cs = assemble_closures(ps, &basis.combine_moments(lambda), phi, bm)?;
    let b = cs.bounds(ps);
    if !b.admissible(1e-6) {
        log::debug!(
            "reconstructed closures out of range: diag [{:.3e}, {:.3e}], beta [{:.3e}, {:.3e}]",
            b.min_diag,
            b.max_diag,
            b.min_beta,
            b.max_beta
        );
    }
    Ok(cs)
}

/// Zeroth moments the online stage takes from the archive for step `n`.
pub struct StepMoments<'a> {
    pub current: &'a [f64],
    pub previous: &'a [f64],
}

/// NBTE operators of step `n` at temperature `t`.
pub fn step_operators<'a>(
    problem: &'a Problem,
    moments: &StepMoments<'_>,
    t: &[f64],
) -> Result<NbteOperators<'a>> {
    let mat = problem.material.evaluate(&problem.ps.groups, t);
    NbteOperators::new(
        &problem.ps,
        &problem.bc,
        &mat,
        moments.current,
        moments.previous,
        problem.dt,
        problem.material.c,
    )
}

struct Projector<'a> {
    basis: &'a PodBasis,
    w: &'a WeightMatrix,
    w_sqrt: Vec<f64>,
    moments: StepMoments<'a>,
    lambda_prev: &'a [f64],
    last: Option<RomCoefficients>,
    /// Test basis storage reused across the outer iterations of one step.
    psi: Option<TestBasis>,
}

impl HighOrder for Projector<'_> {
    fn update(&mut self, problem: &Problem, temperature: &[f64]) -> Result<ClosureSet> {
        let ops = step_operators(problem, &self.moments, temperature)?;
        let psi = match self.psi.take() {
            Some(mut p) => {
                fill_test_basis(&ops, &self.basis.u, &self.w_sqrt, &mut p.weighted)?;
                p
            }
            None => build_test_basis(&ops, &self.basis.u, &self.w_sqrt)?,
        };
        let coef = solve_projected(&psi, self.w, &ops, &self.basis.u, self.lambda_prev)?;
        self.psi = Some(psi);
        let cs = reconstruct_closures(&problem.ps, self.basis, &coef.lambda, self.moments.current, &problem.bm)?;
        self.last = Some(coef);
        Ok(cs)
    }
}

/// Checks that a basis can drive `problem`.
pub fn check_basis(problem: &Problem, basis: &PodBasis) -> Result<()> {
    check_descriptor(&problem.ps, basis)?;
    if problem.steps > basis.n_snapshots() {
        return Err(TrtError::ArchiveMismatch(format!(
            "{} steps requested, archive holds {} snapshots",
            problem.steps,
            basis.n_snapshots()
        )));
    }
    if let Some(h) = basis.h.first() {
        if (h - problem.dt).abs() > 1e-12 * problem.dt {
            return Err(TrtError::ArchiveMismatch(format!(
                "archive time step {h:e} differs from configuration {:e}",
                problem.dt
            )));
        }
    }
    Ok(())
}

/// Initial record with the projected initial coefficients stored in its
/// diagnostics.
pub fn rom_initial(problem: &Problem, basis: &PodBasis) -> Result<(StepRecord, ClosureSet)> {
    let (mut rec, i0) = problem.initial_state();
    let w = problem.ps.weights();
    let ibar0 = normalize_with_floor(&problem.ps, &i0, &rec.phi)?;
    let moments = StepMoments {
        current: &basis.phi[0],
        previous: &rec.phi,
    };
    let ops = step_operators(problem, &moments, &rec.temperature)?;
    let psi = build_test_basis(&ops, &basis.u, &w.sqrt())?;
    let lambda0 = initial_coefficients(&psi, &w, &basis.u, &ibar0)?;
    rec.rom = Some(RomDiagnostics {
        residual_norm: 0.0,
        drift: normalization_drift(&problem.ps, &basis.expand(&lambda0)),
        coefficients: lambda0,
    });
    Ok((rec, ClosureSet::isotropic(&problem.ps)))
}

/// Advances the reduced model from `prev` (step `n - 1`) to step `n`.
pub fn rom_step(
    problem: &Problem,
    basis: &PodBasis,
    phi0: &[f64],
    prev: &StepRecord,
    prev_closures: &ClosureSet,
) -> Result<(StepRecord, ClosureSet)> {
    let n = prev.step + 1;
    let lambda_prev = &prev
        .rom
        .as_ref()
        .ok_or_else(|| TrtError::InvalidArgument("previous record carries no coefficients".into()))?
        .coefficients;
    let w = problem.ps.weights();
    let mut proj = Projector {
        basis,
        w: &w,
        w_sqrt: w.sqrt(),
        moments: StepMoments {
            current: &basis.phi[n - 1],
            previous: if n == 1 { phi0 } else { &basis.phi[n - 2] },
        },
        lambda_prev,
        last: None,
        psi: None,
    };
    let out = outer_loop(problem, prev, prev_closures, &mut proj)?;
    let coef = proj.last.expect("at least one projection per step");
    let drift = normalization_drift(&problem.ps, &basis.expand(&coef.lambda));
    let record = StepRecord {
        step: n,
        time: n as f64 * problem.dt,
        temperature: out.inner.temperature,
        t_sweep: out.t_sweep,
        grey: out.inner.grey,
        mg: out.inner.mg,
        phi: basis.phi[n - 1].clone(),
        outer_iterations: out.outer_iterations,
        inner_iterations: out.inner_iterations,
        rom: Some(RomDiagnostics {
            residual_norm: coef.residual_norm,
            drift,
            coefficients: coef.lambda,
        }),
    };
    Ok((record, out.closures))
}

/// Runs the reduced model; `sink` sees every record including the initial one.
pub fn rom_run(
    problem: &Problem,
    basis: &PodBasis,
    mut sink: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Trajectory> {
    check_basis(problem, basis)?;
    let (mut rec, mut closures) = rom_initial(problem, basis)?;
    let phi0 = rec.phi.clone();
    sink(&rec)?;
    let mut traj = Trajectory {
        dt: problem.dt,
        records: vec![rec.clone()],
    };
    for _ in 0..problem.steps {
        let (r, c) = rom_step(problem, basis, &phi0, &rec, &closures)?;
        log::info!(
            "rom step {} k={} outer={} residual={:.3e} drift={:.3e}",
            r.step,
            basis.k(),
            r.outer_iterations,
            r.rom.as_ref().map_or(0.0, |d| d.residual_norm),
            r.rom.as_ref().map_or(0.0, |d| d.drift)
        );
        sink(&r)?;
        traj.records.push(r.clone());
        rec = r;
        closures = c;
    }
    Ok(traj)
}

/// `||R(U zeta)||_W` of the scaled residual for arbitrary coefficients.
pub fn residual_norm_at(
    ops: &NbteOperators<'_>,
    w: &WeightMatrix,
    basis: &PodBasis,
    zeta: &[f64],
    lambda_prev: &[f64],
) -> Result<f64> {
    let r = ops.residual(&basis.expand(zeta), &basis.expand(lambda_prev))?;
    crate::phase_space::weighted_norm(&r, w)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::closures::{shape_moments, BoundaryMoments};
    use crate::phase_space::{weighted_norm, Side};
    use crate::testing::{random_material, random_positive, space};
    use crate::transport::BoundaryCondition;
    use rand::{Rng, SeedableRng};

    const C: f64 = 29.979_245_8;

    struct Fixture {
        ps: PhaseSpace,
        bc: BoundaryCondition,
        basis: PodBasis,
    }

    fn fixture(k: usize) -> Fixture {
        let ps = space(2, 2, 1, 1, &[1.0, 3.0]);
        let mut bc = BoundaryCondition::vacuum(&ps);
        bc.set_isotropic(Side::Left, &[1.5, 0.5]);
        let u: Vec<Vec<f64>> = (0..k).map(|l| random_positive(ps.dim(), 100 + l as u64)).collect();
        let moments = u.iter().map(|x| shape_moments(&ps, x).unwrap()).collect();
        let basis = PodBasis {
            descriptor: ps.descriptor(),
            xi: 0.0,
            sigma: vec![1.0; k],
            u,
            moments,
            phi: vec![random_positive(ps.phi_dim(), 7)],
            h: vec![0.1],
        };
        Fixture { ps, bc, basis }
    }

    fn ops<'a>(fx: &'a Fixture, seed: u64) -> NbteOperators<'a> {
        let mat = random_material(fx.ps.grid.n_cells(), 2, seed);
        let phi_p = random_positive(fx.ps.phi_dim(), seed + 1);
        NbteOperators::new(&fx.ps, &fx.bc, &mat, &fx.basis.phi[0], &phi_p, 0.1, C).unwrap()
    }

    #[test]
    fn test_basis_is_the_residual_jacobian() {
        let fx = fixture(3);
        let op = ops(&fx, 1);
        let w_sqrt = fx.ps.weights().sqrt();
        let psi = build_test_basis(&op, &fx.basis.u, &w_sqrt).unwrap();
        let lam = [0.3, -0.2, 0.9];
        let prev = fx.basis.expand(&[0.1, 0.1, 0.1]);
        let r0 = op.residual(&fx.basis.expand(&lam), &prev).unwrap();
        for l in 0..3 {
            let mut bumped = lam;
            bumped[l] += 1.0;
            let r1 = op.residual(&fx.basis.expand(&bumped), &prev).unwrap();
            let col = psi.column(l, &w_sqrt);
            for d in 0..fx.ps.dim() {
                let fd = r1[d] - r0[d];
                assert!((fd - col[d]).abs() < 1e-12 * (1.0 + col[d].abs()), "column {l}, entry {d}");
            }
        }
    }

    #[test]
    fn projected_solve_minimizes_weighted_residual() {
        let fx = fixture(4);
        let op = ops(&fx, 2);
        let w = fx.ps.weights();
        let psi = build_test_basis(&op, &fx.basis.u, &w.sqrt()).unwrap();
        let lambda_prev = [0.2, 0.1, -0.3, 0.4];
        let sol = solve_projected(&psi, &w, &op, &fx.basis.u, &lambda_prev).unwrap();
        let at = residual_norm_at(&op, &w, &fx.basis, &sol.lambda, &lambda_prev).unwrap();
        assert!((at - sol.residual_norm).abs() < 1e-10 * at);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let scale = 10f64.powi(rng.random_range(-6..0));
            let z: Vec<f64> = sol.lambda.iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect();
            let r = residual_norm_at(&op, &w, &fx.basis, &z, &lambda_prev).unwrap();
            assert!(r >= at * (1.0 - 1e-12), "perturbation lowered residual: {r:e} < {at:e}");
        }
    }

    #[test]
    fn projection_beats_fixed_coefficients() {
        let fx = fixture(3);
        let op = ops(&fx, 3);
        let w = fx.ps.weights();
        let psi = build_test_basis(&op, &fx.basis.u, &w.sqrt()).unwrap();
        let target = [0.5, 0.25, 0.125];
        let lambda_prev = [0.0; 3];
        let r_target = residual_norm_at(&op, &w, &fx.basis, &target, &lambda_prev).unwrap();
        let sol = solve_projected(&psi, &w, &op, &fx.basis.u, &lambda_prev).unwrap();
        assert!(sol.residual_norm <= r_target * (1.0 + 1e-12));
        let r0 = weighted_norm(&op.residual(&vec![0.0; fx.ps.dim()], &vec![0.0; fx.ps.dim()]).unwrap(), &w).unwrap();
        assert!(sol.residual_norm <= r0);
    }

    #[test]
    fn initial_projection_reproduces_a_basis_vector() {
        let fx = fixture(3);
        let op = ops(&fx, 4);
        let w = fx.ps.weights();
        let psi = build_test_basis(&op, &fx.basis.u, &w.sqrt()).unwrap();
        let lam = initial_coefficients(&psi, &w, &fx.basis.u, &fx.basis.u[1]).unwrap();
        assert!((lam[1] - 1.0).abs() < 1e-10);
        assert!(lam[0].abs() < 1e-10 && lam[2].abs() < 1e-10);
    }

    #[test]
    fn zero_coefficients_leave_only_boundary_inflow() {
        let fx = fixture(2);
        let bm = BoundaryMoments::new(&fx.ps, &fx.bc);
        let cs = reconstruct_closures(&fx.ps, &fx.basis, &[0.0, 0.0], &fx.basis.phi[0], &bm).unwrap();
        assert!(cs.cell.iter().all(|t| t.iter().all(|&v| v == 0.0)));
        let grid = &fx.ps.grid;
        for g in 0..fx.ps.n_groups() {
            for f in 0..grid.n_faces() {
                let t = cs.face[g * grid.n_faces() + f];
                let driven = grid.boundary_side(f) == Some(Side::Left);
                assert_eq!(t.iter().any(|&v| v != 0.0), driven, "face {f}");
            }
        }
    }

    #[test]
    fn blocked_product_matches_column_dots() {
        let a = DMatrix::from_column_slice(1000, 3, &random_positive(3000, 4));
        let b = DMatrix::from_column_slice(1000, 5, &random_positive(5000, 5));
        let fast = tr_mul_blocked(&a, &b);
        let slow = a.tr_mul(&b);
        assert_eq!(fast.shape(), (3, 5));
        assert!((fast - &slow).amax() <= 1e-12 * slow.amax());
        assert_eq!(tr_mul_blocked(&DMatrix::zeros(0, 2), &DMatrix::zeros(0, 2)), DMatrix::zeros(2, 2));
    }

    #[test]
    fn closures_superpose_basis_moments() {
        let fx = fixture(3);
        let bm = BoundaryMoments::new(&fx.ps, &fx.bc);
        let lam = [0.7, -0.1, 0.4];
        let got = reconstruct_closures(&fx.ps, &fx.basis, &lam, &fx.basis.phi[0], &bm).unwrap();
        let direct = shape_moments(&fx.ps, &fx.basis.expand(&lam)).unwrap();
        let want = assemble_closures(&fx.ps, &direct, &fx.basis.phi[0], &bm).unwrap();
        for (a, b) in got.cell.iter().chain(&got.face).zip(want.cell.iter().chain(&want.face)) {
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() < 1e-12 * (1.0 + b[k].abs()));
            }
        }
    }
}
