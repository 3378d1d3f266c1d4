//! Batch driver behind the `trt` binary.

use crate::config::{RunConfig, SMax};
use crate::error::{Result, TrtError};
use crate::fom::fom_run;
use crate::metrics::{compare, write_singular_values, write_text, ErrorReport};
use crate::pod::{offline, read_basis, write_basis, PodBasis, StoreSnapshots};
use crate::problem::{Problem, Trajectory};
use crate::rom::rom_run;
use crate::store::{RunManifest, StoreReader, StoreWriter};
use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Columns of the snapshot matrix held in memory at once during the Gram
/// accumulation.
pub const GRAM_BLOCK: usize = 32;

#[derive(Parser, Debug)]
#[command(name = "trt", version, about = "Thermal radiative transfer full-order and reduced-order models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the matching path in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// POD tolerance; repeatable.
    #[arg(long)]
    pub xi: Vec<f64>,
    /// Outer iteration cap: a positive integer or `unbounded`.
    #[arg(long)]
    pub smax: Option<SMax>,
    /// Number of time steps to run.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Full-order run; stores every step including intensities.
    Fom(Common),
    /// Builds basis archives from a stored full-order run.
    Offline(Common),
    /// Reduced-order run from a basis archive.
    Rom(Common),
    /// Error tables of a test trajectory against a reference.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Reference run directory; defaults to `fom_dir`.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Test run directory; defaults to `rom_dir`.
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

impl Common {
    /// Configuration with command-line overrides applied.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if !self.xi.is_empty() {
            cfg.xi = self.xi.clone();
        }
        if let Some(s) = self.smax {
            cfg.smax = s;
        }
        if let Some(n) = self.steps {
            cfg.run_steps = Some(n);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Directory name of the archive for tolerance `xi`.
pub fn xi_dir(base: &Path, xi: f64) -> PathBuf {
    base.join(format!("xi_{xi:e}"))
}

/// Full-order run written to `out`.
pub fn run_fom(cfg: &RunConfig, out: &Path) -> Result<Trajectory> {
    let problem = Problem::from_config(cfg)?;
    let manifest = RunManifest::new(&problem.ps, "fom", problem.dt, &cfg.to_text());
    let mut w = StoreWriter::create(out, manifest)?;
    let traj = fom_run(&problem, |rec, i| w.write(rec, Some(i)))?;
    w.finish()?;
    Ok(traj)
}

/// Offline stage from the run in `fom_dir`; one archive per tolerance under `out`.
pub fn run_offline(cfg: &RunConfig, fom_dir: &Path, out: &Path) -> Result<Vec<PodBasis>> {
    let problem = Problem::from_config(cfg)?;
    let store = StoreReader::open(fom_dir)?;
    let src = StoreSnapshots::new(&problem.ps, &store)?;
    let (svd, bases) = offline(&problem.ps, &src, &cfg.xi, GRAM_BLOCK)?;
    std::fs::create_dir_all(out).map_err(|e| TrtError::io(out, e))?;
    write_singular_values(&out.join("singular_values.csv"), &svd.sigma)?;
    let mut ranks = String::from("xi,k,r\n");
    for b in &bases {
        write_basis(&xi_dir(out, b.xi), b)?;
        let _ = writeln!(ranks, "{:e},{},{}", b.xi, b.k(), b.rank());
    }
    write_text(&out.join("ranks.csv"), &ranks)?;
    Ok(bases)
}

/// Reduced-order run from the archive in `basis_dir`, written to `out`.
pub fn run_rom(cfg: &RunConfig, basis_dir: &Path, out: &Path) -> Result<Trajectory> {
    let problem = Problem::from_config(cfg)?;
    let basis = read_basis(basis_dir)?;
    crate::rom::check_basis(&problem, &basis)?;
    let manifest = RunManifest::new(&problem.ps, "rom", problem.dt, &cfg.to_text());
    let mut w = StoreWriter::create(out, manifest)?;
    let traj = rom_run(&problem, &basis, |rec| w.write(rec, None))?;
    w.finish()?;
    Ok(traj)
}

/// Compares two stored runs and writes the CSV tables to `out`.
pub fn run_compare(cfg: &RunConfig, reference: &Path, test: &Path, out: &Path) -> Result<ErrorReport> {
    let problem = Problem::from_config(cfg)?;
    let r = StoreReader::open(reference)?;
    let t = StoreReader::open(test)?;
    for s in [&r, &t] {
        if s.manifest.descriptor != problem.ps.descriptor() {
            return Err(TrtError::ArchiveMismatch(format!(
                "run `{}` does not match the configuration",
                s.manifest.descriptor
            )));
        }
    }
    let report = compare(&problem.ps, &r.trajectory()?, &t.trajectory()?)?;
    report.write_csv(out)?;
    Ok(report)
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fom(c) => {
            let cfg = c.load()?;
            let out = c.out.clone().unwrap_or_else(|| cfg.fom_dir.clone());
            let traj = run_fom(&cfg, &out)?;
            println!("fom: {} steps written to {}", traj.n_steps(), out.display());
        }
        Command::Offline(c) => {
            let cfg = c.load()?;
            let out = c.out.clone().unwrap_or_else(|| cfg.basis_dir.clone());
            for b in run_offline(&cfg, &cfg.fom_dir, &out)? {
                println!("xi = {:e}: k = {} of r = {}", b.xi, b.k(), b.rank());
            }
        }
        Command::Rom(c) => {
            let cfg = c.load()?;
            let xi = match cfg.xi.as_slice() {
                [x] => *x,
                _ => {
                    return Err(TrtError::Config(
                        "rom needs exactly one tolerance; pass --xi".into(),
                    ))
                }
            };
            let out = c.out.clone().unwrap_or_else(|| cfg.rom_dir.clone());
            let traj = run_rom(&cfg, &xi_dir(&cfg.basis_dir, xi), &out)?;
            println!("rom: {} steps written to {}", traj.n_steps(), out.display());
        }
        Command::Compare { common, reference, test } => {
            let cfg = common.load()?;
            let out = common.out.clone().unwrap_or_else(|| cfg.report_dir.clone());
            let reference = reference.unwrap_or_else(|| cfg.fom_dir.clone());
            let test = test.unwrap_or_else(|| cfg.rom_dir.clone());
            let rep = run_compare(&cfg, &reference, &test, &out)?;
            println!(
                "max relative error: T {:.3e}, E {:.3e}; tables in {}",
                rep.max_temperature(),
                rep.max_energy(),
                out.display()
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("trt").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let Command::Offline(c) = parse(&["offline", "--xi", "1e-2", "--xi", "1e-4", "--smax", "1", "--steps", "7"]).command
        else {
            panic!("wrong subcommand")
        };
        let cfg = c.load().unwrap();
        assert_eq!(cfg.xi, vec![1e-2, 1e-4]);
        assert_eq!(cfg.smax, SMax::Limit(1));
        assert_eq!(cfg.steps_to_run(), 7);
        assert_eq!(cfg.nx, 10);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(Cli::try_parse_from(["trt", "fom", "--smax", "zero"]).is_err());
        assert!(Cli::try_parse_from(["trt", "explode"]).is_err());
        let Command::Fom(c) = parse(&["fom", "--steps", "0"]).command else {
            panic!("wrong subcommand")
        };
        assert_eq!(c.load().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn rom_requires_one_tolerance() {
        let err = run(parse(&["rom", "--xi", "1e-2", "--xi", "1e-4"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_inputs_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::ci();
        let err = run_rom(&cfg, &dir.path().join("none"), &dir.path().join("rom")).unwrap_err();
        assert_eq!(err.exit_code(), 5);
        let err = run_offline(&cfg, &dir.path().join("none"), &dir.path().join("b")).unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn archive_names_are_stable() {
        assert_eq!(xi_dir(Path::new("b"), 1e-6), PathBuf::from("b/xi_1e-6"));
        assert_eq!(xi_dir(Path::new("b"), 0.0), PathBuf::from("b/xi_0e0"));
    }
}
