//! Full-order model: transport sweeps closing the multilevel moment system.

use crate::closures::{assemble_closures, shape_moments, ClosureSet};
use crate::error::Result;
use crate::nbte::normalize_with_floor;
use crate::problem::{outer_loop, HighOrder, Problem, StepRecord, Trajectory};
use crate::transport::{compute_moments, scb_sweep};

/// State carried between full-order steps.
#[derive(Clone, Debug)]
pub struct FomState {
    pub record: StepRecord,
    pub intensity: Vec<f64>,
    pub closures: ClosureSet,
}

impl FomState {
    pub fn initial(problem: &Problem) -> Self {
        let (record, intensity) = problem.initial_state();
        FomState {
            record,
            intensity,
            closures: ClosureSet::isotropic(&problem.ps),
        }
    }
}

/// Closures of a corner-intensity field through its normalized form.
pub fn closures_of(problem: &Problem, intensity: &[f64]) -> Result<(ClosureSet, Vec<f64>)> {
    let ps = &problem.ps;
    let phi = compute_moments(ps, intensity, &problem.bc)?.phi;
    let ibar = normalize_with_floor(ps, intensity, &phi)?;
    let sm = shape_moments(ps, &ibar)?;
    Ok((assemble_closures(ps, &sm, &phi, &problem.bm)?, phi))
}

struct Sweeper<'a> {
    i_prev: &'a [f64],
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl HighOrder for Sweeper<'_> {
    fn update(&mut self, problem: &Problem, temperature: &[f64]) -> Result<ClosureSet> {
        let mat = problem.material.evaluate(&problem.ps.groups, temperature);
        let i_new = scb_sweep(
            &problem.ps,
            &mat,
            self.i_prev,
            problem.dt,
            problem.material.c,
            &problem.bc,
        )?;
        let (closures, phi) = closures_of(problem, &i_new)?;
        self.last = Some((i_new, phi));
        Ok(closures)
    }
}

/// Advances the full-order model by one step.
pub fn fom_step(problem: &Problem, prev: &FomState) -> Result<FomState> {
    let mut sweeper = Sweeper {
        i_prev: &prev.intensity,
        last: None,
    };
    let out = outer_loop(problem, &prev.record, &prev.closures, &mut sweeper)?;
    let (intensity, phi) = sweeper.last.expect("at least one sweep per step");
    let n = prev.record.step + 1;
    let record = StepRecord {
        step: n,
        time: n as f64 * problem.dt,
        temperature: out.inner.temperature,
        t_sweep: out.t_sweep,
        grey: out.inner.grey,
        mg: out.inner.mg,
        phi,
        outer_iterations: out.outer_iterations,
        inner_iterations: out.inner_iterations,
        rom: None,
    };
    Ok(FomState {
        record,
        intensity,
        closures: out.closures,
    })
}

/// Runs all steps. `sink` receives every record, including the initial one,
/// together with its corner intensities.
pub fn fom_run(
    problem: &Problem,
    mut sink: impl FnMut(&StepRecord, &[f64]) -> Result<()>,
) -> Result<Trajectory> {
    let mut state = FomState::initial(problem);
    sink(&state.record, &state.intensity)?;
    let mut traj = Trajectory {
        dt: problem.dt,
        records: vec![state.record.clone()],
    };
    for _ in 0..problem.steps {
        state = fom_step(problem, &state)?;
        log::info!(
            "fom step {} t={:.3} outer={} inner={:?}",
            state.record.step,
            state.record.time,
            state.record.outer_iterations,
            state.record.inner_iterations
        );
        sink(&state.record, &state.intensity)?;
        traj.records.push(state.record.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RunConfig, SMax};
    use crate::phase_space::Side;

    fn ci_problem(steps: usize) -> Problem {
        let mut cfg = RunConfig::ci();
        cfg.run_steps = Some(steps);
        Problem::from_config(&cfg).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let mut p = ci_problem(3);
        p.t0 = 1.0;
        let drive: Vec<f64> = (0..p.ps.n_groups())
            .map(|g| p.material.planck_group(&p.ps.groups, g, 1.0))
            .collect();
        for side in Side::ALL {
            p.bc.set_isotropic(side, &drive);
        }
        let p = Problem::new(
            p.ps, p.material, p.bc, 1.0, p.dt, 3, SMax::Unbounded, 1e-10, 1e-12,
        );
        let traj = fom_run(&p, |_, _| Ok(())).unwrap();
        for r in &traj.records {
            for &t in &r.temperature {
                assert!((t - 1.0).abs() < 1e-9, "{t}");
            }
        }
    }

    #[test]
    fn ci_run_converges_and_conserves() {
        let p = ci_problem(4);
        let traj = fom_run(&p, |_, _| Ok(())).unwrap();
        for w in traj.records.windows(2) {
            let res = p.energy_balance(&w[0], &w[1]);
            assert!(res < 1e-9, "energy residual {res}");
            assert!(w[1].outer_iterations >= 1);
        }
        let last = traj.records.last().unwrap();
        let nx = p.ps.grid.nx;
        // Heated from the left: the first column is warmer than the last.
        assert!(last.temperature[0] > last.temperature[nx - 1]);
        assert!(last.temperature.iter().all(|&t| t >= p.t0 * (1.0 - 1e-12)));
    }
}
