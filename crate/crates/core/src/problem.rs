//! Problem definition, per-step records and the outer iteration shared by
//! the full-order and reduced-order models.

use crate::closures::{BoundaryMoments, ClosureSet};
use crate::config::{RunConfig, SMax};
use crate::error::{Result, TrtError};
use crate::loqd::{inner_iterate, rel_change, InnerState, LowOrderPrev, MomentField};
use crate::material::MaterialModel;
use crate::phase_space::{AngularQuadrature, FrequencyGroups, PhaseSpace, Side, SpatialGrid};
use crate::transport::{compute_moments, isotropic_field, BoundaryCondition};
use std::f64::consts::PI;

/// Outer iterations allowed per step when `smax` is unbounded.
pub const OUTER_CAP: usize = 100;

/// A fully specified TRT problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub ps: PhaseSpace,
    pub material: MaterialModel,
    pub bc: BoundaryCondition,
    pub bm: BoundaryMoments,
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    pub smax: SMax,
    pub eps_s: f64,
    pub eps_p: f64,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: PhaseSpace,
        material: MaterialModel,
        bc: BoundaryCondition,
        t0: f64,
        dt: f64,
        steps: usize,
        smax: SMax,
        eps_s: f64,
        eps_p: f64,
    ) -> Self {
        let bm = BoundaryMoments::new(&ps, &bc);
        Problem {
            ps,
            material,
            bc,
            bm,
            t0,
            dt,
            steps,
            smax,
            eps_s,
            eps_p,
        }
    }

    /// Fleck–Cummings setup: Planckian drive at `t_in` on the left side,
    /// vacuum elsewhere.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let ps = PhaseSpace::new(
            SpatialGrid::new(cfg.nx, cfg.ny, cfg.lx, cfg.ly)?,
            AngularQuadrature::new(cfg.n_polar, cfg.n_azim)?,
            FrequencyGroups::new(cfg.group_bounds.clone())?,
        );
        let material = MaterialModel::fleck_cummings(cfg.t_in, cfg.cv_coeff)?;
        let mut bc = BoundaryCondition::vacuum(&ps);
        let drive: Vec<f64> = (0..ps.n_groups())
            .map(|g| material.planck_group(&ps.groups, g, cfg.t_in))
            .collect();
        bc.set_isotropic(Side::Left, &drive);
        Ok(Problem::new(
            ps,
            material,
            bc,
            cfg.t0,
            cfg.dt(),
            cfg.steps_to_run(),
            cfg.smax,
            cfg.eps_s,
            cfg.eps_p,
        ))
    }

    pub fn with_smax(mut self, smax: SMax) -> Self {
        self.smax = smax;
        self
    }

    /// Initial record: uniform `t0`, isotropic Planckian radiation.
    pub fn initial_state(&self) -> (StepRecord, Vec<f64>) {
        let ps = &self.ps;
        let grid = &ps.grid;
        let (nc, nf) = (grid.n_cells(), grid.n_faces());
        let t = vec![self.t0; nc];
        let mut b = Vec::with_capacity(ps.n_groups() * nc);
        let mut mg = Vec::with_capacity(ps.n_groups());
        for g in 0..ps.n_groups() {
            let bg = self.material.planck_group(&ps.groups, g, self.t0);
            b.extend(std::iter::repeat(bg).take(nc));
            let e = 4.0 * PI * bg / self.material.c;
            mg.push(MomentField {
                e_cell: vec![e; nc],
                e_face: vec![e; nf],
                f_face: vec![0.0; nf],
            });
        }
        let intensity = isotropic_field(ps, &b);
        let phi = compute_moments(ps, &intensity, &self.bc)
            .expect("initial field conforms to phase space")
            .phi;
        let grey = MomentField::sum(&mg);
        let rec = StepRecord {
            step: 0,
            time: 0.0,
            temperature: t.clone(),
            t_sweep: t,
            grey,
            mg,
            phi,
            outer_iterations: 0,
            inner_iterations: vec![],
            rom: None,
        };
        (rec, intensity)
    }

    /// Relative residual of the global energy balance between two records:
    /// change of radiation plus material energy against the net boundary inflow.
    pub fn energy_balance(&self, prev: &StepRecord, cur: &StepRecord) -> f64 {
        let grid = &self.ps.grid;
        let vol = grid.cell_area();
        let cv = self.material.cv;
        let total = |r: &StepRecord| -> f64 {
            r.grey.e_cell.iter().map(|e| e * vol).sum::<f64>()
                + r.temperature.iter().map(|t| cv * t * vol).sum::<f64>()
        };
        let mut outflow = 0.0;
        for f in 0..grid.n_faces() {
            if let Some(side) = grid.boundary_side(f) {
                let sg = match side {
                    Side::Right | Side::Top => 1.0,
                    _ => -1.0,
                };
                outflow += sg * cur.grey.f_face[f] * grid.face_length(f);
            }
        }
        let (e0, e1) = (total(prev), total(cur));
        (e1 - e0 + self.dt * outflow).abs() / e1.abs().max(e0.abs())
    }
}

/// Reduced-model diagnostics of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct RomDiagnostics {
    /// Scaled NBTE residual W-norm of the final projected solve.
    pub residual_norm: f64,
    /// Largest deviation of the reconstructed cell angular integral from one.
    pub drift: f64,
    pub coefficients: Vec<f64>,
}

/// Everything emitted for one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub temperature: Vec<f64>,
    /// Temperature at which the last high-order solve of this step was done.
    pub t_sweep: Vec<f64>,
    pub grey: MomentField,
    pub mg: Vec<MomentField>,
    /// Zeroth moments in the `(X + X_f) * G` layout.
    pub phi: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: Vec<usize>,
    pub rom: Option<RomDiagnostics>,
}

/// Time history of a run, without intensities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// High-order stage of an outer iteration: maps a temperature estimate to
/// new closures.
pub trait HighOrder {
    fn update(&mut self, problem: &Problem, temperature: &[f64]) -> Result<ClosureSet>;
}

pub struct OuterResult {
    pub inner: InnerState,
    pub closures: ClosureSet,
    pub t_sweep: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: Vec<usize>,
}

/// Outer iterations of one time step.
pub fn outer_loop<H: HighOrder>(
    problem: &Problem,
    prev: &StepRecord,
    prev_closures: &ClosureSet,
    ho: &mut H,
) -> Result<OuterResult> {
    let low = LowOrderPrev {
        temperature: &prev.temperature,
        mg: &prev.mg,
        grey: &prev.grey,
    };
    let inner = |closures: &ClosureSet, t: &[f64], e: &[f64]| {
        inner_iterate(
            &problem.ps,
            &problem.material,
            closures,
            &problem.bm,
            &low,
            t,
            e,
            problem.dt,
            problem.eps_p,
        )
    };
    let mut state = inner(prev_closures, &prev.temperature, &prev.grey.e_cell)?;
    let mut inner_counts = vec![state.iterations];
    let cap = problem.smax.limit().unwrap_or(OUTER_CAP);
    let mut last_change = f64::INFINITY;
    for s in 1..=cap {
        let t_sweep = state.temperature.clone();
        let closures = ho.update(problem, &t_sweep)?;
        let next = inner(&closures, &state.temperature, &state.grey.e_cell)?;
        inner_counts.push(next.iterations);
        let dt_rel = rel_change(&next.temperature, &state.temperature);
        let de_rel = rel_change(&next.grey.e_cell, &state.grey.e_cell);
        last_change = dt_rel.max(de_rel);
        state = next;
        let converged = dt_rel <= problem.eps_s && de_rel <= problem.eps_s;
        if converged || s == cap && problem.smax.limit().is_some() {
            return Ok(OuterResult {
                inner: state,
                closures,
                t_sweep,
                outer_iterations: s,
                inner_iterations: inner_counts,
            });
        }
    }
    Err(TrtError::Convergence {
        stage: "outer iterations",
        iterations: cap,
        residual: last_change,
    })
}
