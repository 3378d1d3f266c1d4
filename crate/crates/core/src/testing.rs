//! Small fixtures shared by unit tests.

use crate::material::CellMaterial;
use crate::phase_space::{AngularQuadrature, FrequencyGroups, PhaseSpace, SpatialGrid};
use rand::{Rng, SeedableRng};

pub fn space(nx: usize, ny: usize, n_polar: usize, n_azim: usize, bounds: &[f64]) -> PhaseSpace {
    PhaseSpace::new(
        SpatialGrid::new(nx, ny, nx as f64 * 0.5, ny as f64 * 0.75).unwrap(),
        AngularQuadrature::new(n_polar, n_azim).unwrap(),
        FrequencyGroups::new(bounds.to_vec()).unwrap(),
    )
}

/// Material with per-group opacity `kappa[g]` and Planckian `planck[g]` in every cell.
pub fn uniform_material(n_cells: usize, kappa: &[f64], planck: &[f64]) -> CellMaterial {
    let mut k = Vec::new();
    let mut b = Vec::new();
    for (kg, bg) in kappa.iter().zip(planck) {
        k.extend(std::iter::repeat_n(*kg, n_cells));
        b.extend(std::iter::repeat_n(*bg, n_cells));
    }
    CellMaterial {
        n_cells,
        kappa: k,
        planck: b,
    }
}

/// Material whose values vary from cell to cell.
pub fn random_material(n_cells: usize, n_groups: usize, seed: u64) -> CellMaterial {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    CellMaterial {
        n_cells,
        kappa: (0..n_cells * n_groups).map(|_| rng.random_range(0.2..20.0)).collect(),
        planck: (0..n_cells * n_groups).map(|_| rng.random_range(0.1..2.0)).collect(),
    }
}

pub fn random_positive(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.1..1.0)).collect()
}
