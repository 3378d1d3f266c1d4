//! Run configuration: flat `key = value` text, one key per field.

use crate::error::{Result, TrtError};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Cap on transport/projection iterations per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SMax {
    Limit(usize),
    Unbounded,
}

impl SMax {
    pub fn limit(self) -> Option<usize> {
        match self {
            SMax::Limit(n) => Some(n),
            SMax::Unbounded => None,
        }
    }
}

impl FromStr for SMax {
    type Err = TrtError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("unbounded") || s == "inf" {
            return Ok(SMax::Unbounded);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(SMax::Limit(n)),
            _ => Err(TrtError::Config(format!("smax must be a positive integer or 'unbounded', got '{s}'"))),
        }
    }
}

impl fmt::Display for SMax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SMax::Limit(n) => write!(f, "{n}"),
            SMax::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// All parameters of a batch run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub group_bounds: Vec<f64>,
    pub n_polar: usize,
    pub n_azim: usize,
    pub t0: f64,
    pub t_in: f64,
    pub cv_coeff: f64,
    pub t_end: f64,
    pub steps: usize,
    pub xi: Vec<f64>,
    pub smax: SMax,
    pub eps_s: f64,
    pub eps_p: f64,
    pub fom_dir: PathBuf,
    pub basis_dir: PathBuf,
    pub rom_dir: PathBuf,
    pub report_dir: PathBuf,
    pub seed: u64,
    /// Number of steps actually run; defaults to `steps`. Not a file key.
    pub run_steps: Option<usize>,
}

pub const FC_GROUP_BOUNDS: [f64; 17] = [
    0.7075, 1.415, 2.123, 2.830, 3.538, 4.245, 5.129, 6.014, 6.898, 7.783, 8.667, 9.551, 10.44,
    11.32, 12.20, 13.09, 1.0e7,
];

impl Default for RunConfig {
    /// The full Fleck–Cummings setup.
    fn default() -> Self {
        RunConfig {
            nx: 10,
            ny: 10,
            lx: 6.0,
            ly: 6.0,
            group_bounds: FC_GROUP_BOUNDS.to_vec(),
            n_polar: 6,
            n_azim: 6,
            t0: 1.0e-3,
            t_in: 1.0,
            cv_coeff: 0.5917,
            t_end: 3.0,
            steps: 150,
            xi: vec![1e-2, 1e-4, 1e-6],
            smax: SMax::Unbounded,
            eps_s: 1e-14,
            eps_p: 1e-14,
            fom_dir: PathBuf::from("runs/fom"),
            basis_dir: PathBuf::from("runs/basis"),
            rom_dir: PathBuf::from("runs/rom"),
            report_dir: PathBuf::from("runs/report"),
            seed: 1,
            run_steps: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| TrtError::Config(format!("bad value for {key}: '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<f64>(key, s))
        .collect()
}

impl RunConfig {
    /// The small configuration used by the test suite.
    pub fn ci() -> Self {
        RunConfig {
            nx: 5,
            ny: 5,
            group_bounds: vec![0.7075, 2.123, 4.245, 7.783, 1.0e7],
            n_polar: 2,
            n_azim: 2,
            t_end: 1.0,
            steps: 50,
            ..RunConfig::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrtError::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrtError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "nx" => self.nx = parse_num(key, v)?,
            "ny" => self.ny = parse_num(key, v)?,
            "lx" => self.lx = parse_num(key, v)?,
            "ly" => self.ly = parse_num(key, v)?,
            "group_bounds" => self.group_bounds = parse_list(key, v)?,
            "n_polar" => self.n_polar = parse_num(key, v)?,
            "n_azim" => self.n_azim = parse_num(key, v)?,
            "t0" => self.t0 = parse_num(key, v)?,
            "t_in" => self.t_in = parse_num(key, v)?,
            "cv_coeff" => self.cv_coeff = parse_num(key, v)?,
            "t_end" => self.t_end = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "xi" => self.xi = parse_list(key, v)?,
            "smax" => self.smax = v.parse()?,
            "eps_s" => self.eps_s = parse_num(key, v)?,
            "eps_p" => self.eps_p = parse_num(key, v)?,
            "fom_dir" => self.fom_dir = PathBuf::from(v),
            "basis_dir" => self.basis_dir = PathBuf::from(v),
            "rom_dir" => self.rom_dir = PathBuf::from(v),
            "report_dir" => self.report_dir = PathBuf::from(v),
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Err(TrtError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrtError::Config(m));
        if self.nx == 0 || self.ny == 0 {
            return bad("nx and ny must be at least 1".into());
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return bad("lx and ly must be positive".into());
        }
        if self.group_bounds.is_empty() {
            return bad("group_bounds must list at least one boundary".into());
        }
        if self.group_bounds.windows(2).any(|w| !(w[1] > w[0])) || !(self.group_bounds[0] > 0.0) {
            return bad("group_bounds must be positive and strictly increasing".into());
        }
        if self.n_polar == 0 || self.n_azim == 0 {
            return bad("n_polar and n_azim must be at least 1".into());
        }
        if !(self.t0 > 0.0 && self.t_in > 0.0 && self.cv_coeff > 0.0 && self.t_end > 0.0) {
            return bad("t0, t_in, cv_coeff and t_end must be positive".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if let Some(r) = self.run_steps {
            if r == 0 || r > self.steps {
                return bad(format!("step override {r} must lie in 1..={}", self.steps));
            }
        }
        if self.xi.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("xi values must lie in [0, 1]".into());
        }
        if !(self.eps_s > 0.0 && self.eps_p > 0.0) {
            return bad("eps_s and eps_p must be positive".into());
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn steps_to_run(&self) -> usize {
        self.run_steps.unwrap_or(self.steps)
    }

    /// Serializes every file key, suitable for `parse`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        format!(
            "nx = {}\nny = {}\nlx = {:e}\nly = {:e}\ngroup_bounds = {}\nn_polar = {}\nn_azim = {}\n\
             t0 = {:e}\nt_in = {:e}\ncv_coeff = {:e}\nt_end = {:e}\nsteps = {}\nxi = {}\nsmax = {}\n\
             eps_s = {:e}\neps_p = {:e}\nfom_dir = {}\nbasis_dir = {}\nrom_dir = {}\nreport_dir = {}\nseed = {}\n",
            self.nx,
            self.ny,
            self.lx,
            self.ly,
            list(&self.group_bounds),
            self.n_polar,
            self.n_azim,
            self.t0,
            self.t_in,
            self.cv_coeff,
            self.t_end,
            self.steps,
            list(&self.xi),
            self.smax,
            self.eps_s,
            self.eps_p,
            self.fom_dir.display(),
            self.basis_dir.display(),
            self.rom_dir.display(),
            self.report_dir.display(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_fleck_cummings() {
        let c = RunConfig::default();
        assert_eq!((c.nx, c.ny, c.steps), (10, 10, 150));
        assert!((c.dt() - 0.02).abs() < 1e-15);
        assert_eq!(c.group_bounds.len(), 17);
        assert_eq!(c.n_polar * c.n_azim * 4, 144);
    }

    #[test]
    fn round_trip_through_text() {
        let mut c = RunConfig::ci();
        c.smax = SMax::Limit(1);
        c.xi = vec![0.0, 1e-8];
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_and_bad_values_rejected() {
        assert!(RunConfig::parse("nx = 3\nfoo = 1\n").is_err());
        assert!(RunConfig::parse("nx = -3\n").is_err());
        assert!(RunConfig::parse("xi = 2.0\n").is_err());
        assert!(RunConfig::parse("smax = 0\n").is_err());
        assert!(RunConfig::parse("group_bounds = 2, 1\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
    }

    #[test]
    fn comments_and_lists() {
        let c = RunConfig::parse("# header\nxi = 1e-2, 1e-4 # trailing\nsmax = unbounded\n").unwrap();
        assert_eq!(c.xi, vec![1e-2, 1e-4]);
        assert_eq!(c.smax, SMax::Unbounded);
        assert_eq!("7".parse::<SMax>().unwrap(), SMax::Limit(7));
    }
}
