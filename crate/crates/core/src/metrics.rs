//! Error measures between trajectories and the derived boundary and
//! spectrum diagnostics, with CSV output.

use crate::error::{check_len, Result, TrtError};
use crate::phase_space::{FrequencyGroups, PhaseSpace, SpatialGrid};
use crate::problem::Trajectory;
use std::fmt::Write as _;
use std::path::Path;

/// `||ref - test||_2 / ||ref||_2` over cell values.
pub fn rel_err_2norm(reference: &[f64], test: &[f64]) -> Result<f64> {
    check_len("test field", reference.len(), test.len())?;
    let mut d = 0.0;
    let mut n = 0.0;
    for (r, t) in reference.iter().zip(test) {
        d += (r - t) * (r - t);
        n += r * r;
    }
    if n == 0.0 {
        return Err(TrtError::InvalidArgument("reference field has zero norm".into()));
    }
    Ok((d / n).sqrt())
}

/// Right-boundary averages `(F_R, E_R, T_R)`: face-midpoint sums over the
/// right faces weighted by their lengths, divided by the boundary length.
/// The temperature is that of the cell adjacent to each face.
pub fn boundary_averages(grid: &SpatialGrid, e_face: &[f64], f_face: &[f64], t_cell: &[f64]) -> (f64, f64, f64) {
    let (mut fr, mut er, mut tr) = (0.0, 0.0, 0.0);
    for (iy, f) in grid.right_boundary_faces().into_iter().enumerate() {
        let len = grid.face_length(f);
        fr += f_face[f] * len;
        er += e_face[f] * len;
        tr += t_cell[grid.cell(grid.nx - 1, iy)] * len;
    }
    (fr / grid.ly, er / grid.ly, tr / grid.ly)
}

/// `sqrt(sum_n x_n^2 dt)`.
pub fn temporal_2norm(series: &[f64], dt: f64) -> f64 {
    (series.iter().map(|x| x * x).sum::<f64>() * dt).sqrt()
}

/// Group energy densities divided by the group widths.
pub fn group_averaged(groups: &FrequencyGroups, e_g: &[f64]) -> Vec<f64> {
    e_g.iter().enumerate().map(|(g, e)| e / groups.width(g)).collect()
}

/// Relative temporal-2-norm error of each group's averaged energy density.
/// Histories are indexed `[step][group]`.
pub fn spectrum_errors(groups: &FrequencyGroups, reference: &[Vec<f64>], test: &[Vec<f64>], dt: f64) -> Result<Vec<f64>> {
    check_len("spectrum history", reference.len(), test.len())?;
    (0..groups.len())
        .map(|g| {
            let r: Vec<f64> = reference.iter().map(|s| s[g] / groups.width(g)).collect();
            let d: Vec<f64> = reference
                .iter()
                .zip(test)
                .map(|(a, b)| (a[g] - b[g]) / groups.width(g))
                .collect();
            let nr = temporal_2norm(&r, dt);
            if nr == 0.0 {
                Ok(if temporal_2norm(&d, dt) == 0.0 { 0.0 } else { f64::INFINITY })
            } else {
                Ok(temporal_2norm(&d, dt) / nr)
            }
        })
        .collect()
}

/// Group energy densities on the bottom face of the right boundary, per step.
pub fn corner_spectrum_history(ps: &PhaseSpace, traj: &Trajectory) -> Vec<Vec<f64>> {
    let f = ps.grid.vface(ps.grid.nx, 0);
    traj.records
        .iter()
        .map(|r| r.mg.iter().map(|m| m.e_face[f]).collect())
        .collect()
}

/// Boundary averages per step.
pub fn boundary_history(ps: &PhaseSpace, traj: &Trajectory) -> Vec<(f64, f64, f64)> {
    traj.records
        .iter()
        .map(|r| boundary_averages(&ps.grid, &r.grey.e_face, &r.grey.f_face, &r.temperature))
        .collect()
}

/// One step of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct StepError {
    pub step: usize,
    pub time: f64,
    pub temperature: f64,
    pub energy: f64,
    /// Relative errors of `(F_R, E_R, T_R)`.
    pub boundary: (f64, f64, f64),
}

/// Comparison of a test trajectory against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub steps: Vec<StepError>,
    pub reference_boundary: Vec<(f64, f64, f64)>,
    pub test_boundary: Vec<(f64, f64, f64)>,
    pub spectrum: Vec<f64>,
}

fn rel_scalar(r: f64, t: f64) -> f64 {
    if r == 0.0 {
        (r - t).abs()
    } else {
        (r - t).abs() / r.abs()
    }
}

impl ErrorReport {
    pub fn max_temperature(&self) -> f64 {
        self.steps.iter().map(|s| s.temperature).fold(0.0, f64::max)
    }

    pub fn max_energy(&self) -> f64 {
        self.steps.iter().map(|s| s.energy).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TrtError::io(dir, e))?;
        let mut s = String::from("step,time,err_T,err_E,err_F_R,err_E_R,err_T_R\n");
        for e in &self.steps {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                e.step, e.time, e.temperature, e.energy, e.boundary.0, e.boundary.1, e.boundary.2
            );
        }
        write_text(&dir.join("errors.csv"), &s)?;
        let mut s = String::from("step,F_R_ref,E_R_ref,T_R_ref,F_R_test,E_R_test,T_R_test\n");
        for (n, (a, b)) in self.reference_boundary.iter().zip(&self.test_boundary).enumerate() {
            let _ = writeln!(s, "{n},{:e},{:e},{:e},{:e},{:e},{:e}", a.0, a.1, a.2, b.0, b.1, b.2);
        }
        write_text(&dir.join("boundary.csv"), &s)?;
        let mut s = String::from("group,rel_err\n");
        for (g, e) in self.spectrum.iter().enumerate() {
            let _ = writeln!(s, "{g},{e:e}");
        }
        write_text(&dir.join("spectrum.csv"), &s)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| TrtError::io(path, e))
}

/// Singular values normalized by the largest, one per line.
pub fn write_singular_values(path: &Path, sigma: &[f64]) -> Result<()> {
    let mut s = String::from("index,sigma,sigma_rel\n");
    for (l, v) in sigma.iter().enumerate() {
        let _ = writeln!(s, "{},{v:e},{:e}", l + 1, v / sigma[0]);
    }
    write_text(path, &s)
}

/// Step-by-step comparison skipping the initial record.
pub fn compare(ps: &PhaseSpace, reference: &Trajectory, test: &Trajectory) -> Result<ErrorReport> {
    check_len("trajectory steps", reference.records.len(), test.records.len())?;
    let rb = boundary_history(ps, reference);
    let tb = boundary_history(ps, test);
    let mut steps = Vec::new();
    for (n, (r, t)) in reference.records.iter().zip(&test.records).enumerate().skip(1) {
        steps.push(StepError {
            step: r.step,
            time: r.time,
            temperature: rel_err_2norm(&r.temperature, &t.temperature)?,
            energy: rel_err_2norm(&r.grey.e_cell, &t.grey.e_cell)?,
            boundary: (
                rel_scalar(rb[n].0, tb[n].0),
                rel_scalar(rb[n].1, tb[n].1),
                rel_scalar(rb[n].2, tb[n].2),
            ),
        });
    }
    let spectrum = spectrum_errors(
        &ps.groups,
        &corner_spectrum_history(ps, reference)[1..],
        &corner_spectrum_history(ps, test)[1..],
        reference.dt,
    )?;
    Ok(ErrorReport {
        steps,
        reference_boundary: rb,
        test_boundary: tb,
        spectrum,
    })
}
