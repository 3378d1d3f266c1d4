use trt_rom::config::{RunConfig, SMax};
use trt_rom::fom::fom_run;
use trt_rom::metrics::compare;
use trt_rom::pod::{assemble_snapshots, offline, FomSnapshot};
use trt_rom::problem::Problem;
use trt_rom::rom::rom_run;

fn short_ci(steps: usize) -> RunConfig {
    let mut cfg = RunConfig::ci();
    cfg.run_steps = Some(steps);
    cfg
}

#[test]
fn reduced_model_error_follows_tolerance() {
    let cfg = short_ci(10);
    let problem = Problem::from_config(&cfg).unwrap();
    let mut kept = Vec::new();
    let fom = fom_run(&problem, |rec, i| {
        if rec.step > 0 {
            kept.push((rec.step, i.to_vec(), rec.phi.clone()));
        }
        Ok(())
    })
    .unwrap();
    let snaps: Vec<FomSnapshot> = kept
        .iter()
        .map(|(s, i, p)| FomSnapshot {
            step: *s,
            dt: problem.dt,
            intensity: i,
            phi: p,
        })
        .collect();
    let set = assemble_snapshots(&problem.ps, &snaps).unwrap();
    let (svd, bases) = offline(&problem.ps, &set, &[1e-2, 1e-4, 0.0], 4).unwrap();
    assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
    assert!(bases[0].k() < bases[1].k() && bases[1].k() <= bases[2].k());

    let mut errors = Vec::new();
    for b in &bases {
        let rom = rom_run(&problem, b, |_| Ok(())).unwrap();
        assert_eq!(rom.records.len(), fom.records.len());
        let rep = compare(&problem.ps, &fom, &rom).unwrap();
        errors.push((rep.max_temperature(), rep.max_energy()));
    }
    assert!(errors[0].0 > errors[1].0 && errors[1].0 > errors[2].0, "{errors:?}");
    assert!(errors[2].0 < 1e-8 && errors[2].1 < 1e-8, "{errors:?}");
    assert!(errors[0].0 < 1e-1, "{errors:?}");
}

#[test]
fn single_outer_iteration_runs_are_consistent() {
    let cfg = short_ci(5);
    let converged = Problem::from_config(&cfg).unwrap();
    let lagged = Problem::from_config(&cfg).unwrap().with_smax(SMax::Limit(1));
    let a = fom_run(&converged, |_, _| Ok(())).unwrap();
    let b = fom_run(&lagged, |_, _| Ok(())).unwrap();
    assert!(b.records[1..].iter().all(|r| r.outer_iterations == 1));
    assert!(a.records[1..].iter().all(|r| r.outer_iterations > 1));
    let rep = compare(&converged.ps, &a, &b).unwrap();
    // Lagging the closures by one sweep perturbs but does not destroy the solution.
    assert!(rep.max_temperature() > 0.0 && rep.max_temperature() < 0.1);
    for (p, c) in b.records.windows(2).map(|w| (&w[0], &w[1])) {
        assert!(lagged.energy_balance(p, c) < 1e-9);
    }
}
