//! On-disk run directories: a text manifest, one little-endian binary record
//! per time step and a CSV of iteration counts.

use crate::error::{Result, TrtError};
use crate::loqd::MomentField;
use crate::phase_space::PhaseSpace;
use crate::problem::{RomDiagnostics, StepRecord, Trajectory};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const RUN_FORMAT: &str = "trt-rom-run 1";
pub const INDEX_ORDERING: &str = "g-major, then m, then i, then alpha";

fn io(path: &Path, e: std::io::Error) -> TrtError {
    TrtError::io(path, e)
}

pub fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(8 * xs.len());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect())
}

fn write_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses `key = value` lines up to an optional `[config]` marker; the rest
/// is returned verbatim.
pub fn parse_header(text: &str) -> (BTreeMap<String, String>, String) {
    let mut map = BTreeMap::new();
    let mut rest = String::new();
    let mut in_rest = false;
    for line in text.lines() {
        if in_rest {
            rest.push_str(line);
            rest.push('\n');
        } else if line.trim() == "[config]" {
            in_rest = true;
        } else if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    (map, rest)
}

pub(crate) fn header_value<'a>(
    map: &'a BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    map.get(key).map(String::as_str).ok_or_else(|| TrtError::Format {
        path: path.to_path_buf(),
        reason: format!("missing header key `{key}`"),
    })
}

pub(crate) fn header_num<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    header_value(map, key, path)?.parse().map_err(|_| TrtError::Format {
        path: path.to_path_buf(),
        reason: format!("bad value for `{key}`"),
    })
}

/// What a run directory holds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub kind: String,
    pub descriptor: String,
    pub n_cells: usize,
    pub n_faces: usize,
    pub n_groups: usize,
    pub dim: usize,
    pub phi_dim: usize,
    pub dt: f64,
    pub records: usize,
    pub config: String,
}

impl RunManifest {
    pub fn new(ps: &PhaseSpace, kind: &str, dt: f64, config: &str) -> Self {
        RunManifest {
            kind: kind.to_string(),
            descriptor: ps.descriptor(),
            n_cells: ps.grid.n_cells(),
            n_faces: ps.grid.n_faces(),
            n_groups: ps.n_groups(),
            dim: ps.dim(),
            phi_dim: ps.phi_dim(),
            dt,
            records: 0,
            config: config.to_string(),
        }
    }

    fn to_text(&self) -> String {
        format!(
            "format = {RUN_FORMAT}\nkind = {}\ndescriptor = {}\nordering = {INDEX_ORDERING}\n\
             endianness = little\nn_cells = {}\nn_faces = {}\nn_groups = {}\nd = {}\np = {}\n\
             dt = {:e}\nrecords = {}\n[config]\n{}",
            self.kind,
            self.descriptor,
            self.n_cells,
            self.n_faces,
            self.n_groups,
            self.dim,
            self.phi_dim,
            self.dt,
            self.records,
            self.config
        )
    }

    fn from_text(text: &str, path: &Path) -> Result<Self> {
        let (map, config) = parse_header(text);
        if header_value(&map, "format", path)? != RUN_FORMAT {
            return Err(TrtError::Format {
                path: path.to_path_buf(),
                reason: "not a run directory manifest".into(),
            });
        }
        Ok(RunManifest {
            kind: header_value(&map, "kind", path)?.to_string(),
            descriptor: header_value(&map, "descriptor", path)?.to_string(),
            n_cells: header_num(&map, "n_cells", path)?,
            n_faces: header_num(&map, "n_faces", path)?,
            n_groups: header_num(&map, "n_groups", path)?,
            dim: header_num(&map, "d", path)?,
            phi_dim: header_num(&map, "p", path)?,
            dt: header_num(&map, "dt", path)?,
            records: header_num(&map, "records", path)?,
            config,
        })
    }
}

fn step_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("step_{n:04}.bin"))
}

fn write_field(w: &mut impl Write, f: &MomentField) -> std::io::Result<()> {
    write_f64s(w, &f.e_cell)?;
    write_f64s(w, &f.e_face)?;
    write_f64s(w, &f.f_face)
}

fn read_field(r: &mut impl Read, nc: usize, nf: usize) -> std::io::Result<MomentField> {
    Ok(MomentField {
        e_cell: read_f64s(r, nc)?,
        e_face: read_f64s(r, nf)?,
        f_face: read_f64s(r, nf)?,
    })
}

/// Writes records into a fresh run directory.
pub struct StoreWriter {
    dir: PathBuf,
    manifest: RunManifest,
    csv: BufWriter<File>,
}

impl StoreWriter {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let csv_path = dir.join("iterations.csv");
        let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| io(&csv_path, e))?);
        writeln!(csv, "step,time,outer,inner_total,inner").map_err(|e| io(&csv_path, e))?;
        let w = StoreWriter {
            dir: dir.to_path_buf(),
            manifest,
            csv,
        };
        w.write_manifest()?;
        Ok(w)
    }

    fn write_manifest(&self) -> Result<()> {
        let p = self.dir.join("manifest.txt");
        fs::write(&p, self.manifest.to_text()).map_err(|e| io(&p, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends a record; records must arrive in step order starting at 0.
    pub fn write(&mut self, rec: &StepRecord, intensity: Option<&[f64]>) -> Result<()> {
        let m = &self.manifest;
        if rec.step != m.records {
            return Err(TrtError::InvalidArgument(format!(
                "record for step {} written at position {}",
                rec.step, m.records
            )));
        }
        let path = step_path(&self.dir, rec.step);
        let ioe = |e| io(&path, e);
        let mut w = BufWriter::new(File::create(&path).map_err(ioe)?);
        write_u64(&mut w, rec.step as u64).map_err(ioe)?;
        write_f64s(&mut w, &[rec.time]).map_err(ioe)?;
        write_u64(&mut w, rec.outer_iterations as u64).map_err(ioe)?;
        write_u64(&mut w, rec.inner_iterations.len() as u64).map_err(ioe)?;
        for &k in &rec.inner_iterations {
            write_u64(&mut w, k as u64).map_err(ioe)?;
        }
        write_f64s(&mut w, &rec.temperature).map_err(ioe)?;
        write_f64s(&mut w, &rec.t_sweep).map_err(ioe)?;
        write_field(&mut w, &rec.grey).map_err(ioe)?;
        for f in &rec.mg {
            write_field(&mut w, f).map_err(ioe)?;
        }
        write_f64s(&mut w, &rec.phi).map_err(ioe)?;
        match &rec.rom {
            Some(d) => {
                write_u64(&mut w, 1 + d.coefficients.len() as u64).map_err(ioe)?;
                write_f64s(&mut w, &[d.residual_norm, d.drift]).map_err(ioe)?;
                write_f64s(&mut w, &d.coefficients).map_err(ioe)?;
            }
            None => write_u64(&mut w, 0).map_err(ioe)?,
        }
        match intensity {
            Some(i) => {
                crate::error::check_len("stored intensity", m.dim, i.len())?;
                write_u64(&mut w, 1).map_err(ioe)?;
                write_f64s(&mut w, i).map_err(ioe)?;
            }
            None => write_u64(&mut w, 0).map_err(ioe)?,
        }
        w.flush().map_err(ioe)?;
        let total: usize = rec.inner_iterations.iter().sum();
        let list: Vec<String> = rec.inner_iterations.iter().map(|k| k.to_string()).collect();
        let csv_path = self.dir.join("iterations.csv");
        writeln!(
            self.csv,
            "{},{:e},{},{},{}",
            rec.step,
            rec.time,
            rec.outer_iterations,
            total,
            list.join(" ")
        )
        .map_err(|e| io(&csv_path, e))?;
        self.manifest.records += 1;
        self.write_manifest()
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        let csv_path = self.dir.join("iterations.csv");
        self.csv.flush().map_err(|e| io(&csv_path, e))?;
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

/// Read access to a run directory.
#[derive(Clone, Debug)]
pub struct StoreReader {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl StoreReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.txt");
        let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        Ok(StoreReader {
            dir: dir.to_path_buf(),
            manifest: RunManifest::from_text(&text, &p)?,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.records
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records == 0
    }

    /// Record `n` and its intensity, when one was stored.
    pub fn read(&self, n: usize) -> Result<(StepRecord, Option<Vec<f64>>)> {
        let m = &self.manifest;
        let path = step_path(&self.dir, n);
        let ioe = |e| io(&path, e);
        let mut r = BufReader::new(File::open(&path).map_err(ioe)?);
        let (nc, nf) = (m.n_cells, m.n_faces);
        let step = read_u64(&mut r).map_err(ioe)? as usize;
        if step != n {
            return Err(TrtError::Format {
                path: path.clone(),
                reason: format!("holds step {step}, expected {n}"),
            });
        }
        let time = read_f64s(&mut r, 1).map_err(ioe)?[0];
        let outer = read_u64(&mut r).map_err(ioe)? as usize;
        let n_inner = read_u64(&mut r).map_err(ioe)? as usize;
        if n_inner > 1 << 20 {
            return Err(TrtError::Format {
                path: path.clone(),
                reason: "implausible inner iteration list".into(),
            });
        }
        let mut inner = Vec::with_capacity(n_inner);
        for _ in 0..n_inner {
            inner.push(read_u64(&mut r).map_err(ioe)? as usize);
        }
        let temperature = read_f64s(&mut r, nc).map_err(ioe)?;
        let t_sweep = read_f64s(&mut r, nc).map_err(ioe)?;
        let grey = read_field(&mut r, nc, nf).map_err(ioe)?;
        let mut mg = Vec::with_capacity(m.n_groups);
        for _ in 0..m.n_groups {
            mg.push(read_field(&mut r, nc, nf).map_err(ioe)?);
        }
        let phi = read_f64s(&mut r, m.phi_dim).map_err(ioe)?;
        let rom_len = read_u64(&mut r).map_err(ioe)? as usize;
        let rom = if rom_len > 0 {
            let head = read_f64s(&mut r, 2).map_err(ioe)?;
            Some(RomDiagnostics {
                residual_norm: head[0],
                drift: head[1],
                coefficients: read_f64s(&mut r, rom_len - 1).map_err(ioe)?,
            })
        } else {
            None
        };
        let intensity = if read_u64(&mut r).map_err(ioe)? == 1 {
            Some(read_f64s(&mut r, m.dim).map_err(ioe)?)
        } else {
            None
        };
        let rec = StepRecord {
            step,
            time,
            temperature,
            t_sweep,
            grey,
            mg,
            phi,
            outer_iterations: outer,
            inner_iterations: inner,
            rom,
        };
        Ok((rec, intensity))
    }

    /// All records, intensities dropped.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let records = (0..self.len())
            .map(|n| self.read(n).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            dt: self.manifest.dt,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{AngularQuadrature, FrequencyGroups, SpatialGrid};

    fn ps() -> PhaseSpace {
        PhaseSpace::new(
            SpatialGrid::new(2, 3, 1.0, 1.5).unwrap(),
            AngularQuadrature::new(2, 2).unwrap(),
            FrequencyGroups::new(vec![1.0, 5.0]).unwrap(),
        )
    }

    fn field(grid: &SpatialGrid, s: f64) -> MomentField {
        MomentField {
            e_cell: (0..grid.n_cells()).map(|i| s * (i as f64 + 0.1).sin()).collect(),
            e_face: (0..grid.n_faces()).map(|i| s / (i as f64 + 3.0)).collect(),
            f_face: (0..grid.n_faces()).map(|i| -s * i as f64 / 7.0).collect(),
        }
    }

    fn record(ps: &PhaseSpace, n: usize, rom: bool) -> StepRecord {
        let g = &ps.grid;
        StepRecord {
            step: n,
            time: n as f64 * 0.1 + 1.0 / 3.0,
            temperature: (0..g.n_cells()).map(|i| 1.0 / (i + n + 1) as f64).collect(),
            t_sweep: (0..g.n_cells()).map(|i| std::f64::consts::PI * i as f64).collect(),
            grey: field(g, 1.0 + n as f64),
            mg: vec![field(g, 0.3), field(g, -1e-300)],
            phi: (0..ps.phi_dim()).map(|k| (k as f64).sqrt() * 1e-17).collect(),
            outer_iterations: 3,
            inner_iterations: vec![7, 4, 1],
            rom: rom.then(|| RomDiagnostics {
                residual_norm: 1e-9,
                drift: f64::MIN_POSITIVE,
                coefficients: vec![0.5, -0.25, 1e10],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ps = ps();
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path(), RunManifest::new(&ps, "fom", 0.1, "nx = 2\n")).unwrap();
        let intensity: Vec<f64> = (0..ps.dim()).map(|k| 1.0 / (k as f64 + 0.7)).collect();
        let recs: Vec<StepRecord> = (0..3).map(|n| record(&ps, n, n == 2)).collect();
        for (n, r) in recs.iter().enumerate() {
            w.write(r, (n != 1).then_some(&intensity[..])).unwrap();
        }
        let man = w.finish().unwrap();
        let rd = StoreReader::open(dir.path()).unwrap();
        assert_eq!(rd.manifest, man);
        assert_eq!(rd.len(), 3);
        for (n, r) in recs.iter().enumerate() {
            let (back, i) = rd.read(n).unwrap();
            assert_eq!(&back, r);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.phi), bits(&r.phi));
            match i {
                Some(i) => assert_eq!(bits(&i), bits(&intensity)),
                None => assert_eq!(n, 1),
            }
        }
        let csv = fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().ends_with(",3,12,7 4 1"));
    }

    #[test]
    fn out_of_order_records_are_rejected() {
        let ps = ps();
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path(), RunManifest::new(&ps, "fom", 0.1, "")).unwrap();
        assert!(w.write(&record(&ps, 1, false), None).is_err());
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = StoreReader::open(&dir.path().join("nope")).unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
