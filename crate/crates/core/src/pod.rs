//! Offline stage: weighted POD of normalized-intensity snapshots by the
//! method of snapshots, rank selection and basis angular moments.

use crate::closures::{shape_moments, ShapeMoments};
use crate::error::{check_len, Result, TrtError};
use crate::nbte::normalize_with_floor;
use crate::phase_space::{PhaseSpace, WeightMatrix};
use crate::store::{header_num, header_value, parse_header, read_f64s, write_f64s, StoreReader, INDEX_ORDERING};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// Eigenvalues of the Gram matrix below this fraction of the largest are
/// discarded.
pub const GRAM_CUTOFF: f64 = 1.0e-28;

/// Relative cutoff actually applied to an `n x n` Gram matrix: rounding in
/// the Gram products leaves eigenvalues of order `n * eps * lambda_max` on
/// exactly dependent snapshots, which must not count towards the rank.
pub fn gram_cutoff(n: usize) -> f64 {
    GRAM_CUTOFF.max(n as f64 * f64::EPSILON)
}

/// Column access to a snapshot matrix `A` with its zeroth moments `Phi`.
pub trait SnapshotSource: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Time step weight of column `n`.
    fn weight(&self, n: usize) -> f64;
    fn column(&self, n: usize) -> Result<Vec<f64>>;
    fn phi(&self, n: usize) -> Result<Vec<f64>>;
}

/// Snapshots held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub a: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl SnapshotSet {
    pub fn new(a: Vec<Vec<f64>>, phi: Vec<Vec<f64>>, h: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(TrtError::InvalidArgument("snapshot set is empty".into()));
        }
        check_len("zeroth-moment columns", a.len(), phi.len())?;
        check_len("time weights", a.len(), h.len())?;
        let d = a[0].len();
        for c in &a {
            check_len("snapshot column", d, c.len())?;
        }
        if h.iter().any(|&x| !(x > 0.0)) {
            return Err(TrtError::InvalidArgument("time weights must be positive".into()));
        }
        Ok(SnapshotSet { a, phi, h })
    }
}

impl SnapshotSource for SnapshotSet {
    fn len(&self) -> usize {
        self.a.len()
    }
    fn dim(&self) -> usize {
        self.a[0].len()
    }
    fn weight(&self, n: usize) -> f64 {
        self.h[n]
    }
    fn column(&self, n: usize) -> Result<Vec<f64>> {
        Ok(self.a[n].clone())
    }
    fn phi(&self, n: usize) -> Result<Vec<f64>> {
        Ok(self.phi[n].clone())
    }
}

/// One full-order step as input to snapshot assembly.
pub struct FomSnapshot<'a> {
    pub step: usize,
    pub dt: f64,
    pub intensity: &'a [f64],
    pub phi: &'a [f64],
}

/// Normalizes steps `1..=N` into a snapshot set. Steps must be given in
/// chronological order without gaps.
pub fn assemble_snapshots(ps: &PhaseSpace, steps: &[FomSnapshot<'_>]) -> Result<SnapshotSet> {
    check_chronology(steps.iter().map(|s| s.step))?;
    let a = steps
        .iter()
        .map(|s| normalize_with_floor(ps, s.intensity, s.phi))
        .collect::<Result<Vec<_>>>()?;
    SnapshotSet::new(
        a,
        steps.iter().map(|s| s.phi.to_vec()).collect(),
        steps.iter().map(|s| s.dt).collect(),
    )
}

fn check_chronology(steps: impl Iterator<Item = usize>) -> Result<()> {
    for (k, s) in steps.enumerate() {
        if s != k + 1 {
            return Err(TrtError::InvalidArgument(format!(
                "snapshot {k} holds step {s}; steps must run 1, 2, ... in order"
            )));
        }
    }
    Ok(())
}

/// Snapshots streamed from a full-order run directory.
pub struct StoreSnapshots<'a> {
    ps: &'a PhaseSpace,
    store: &'a StoreReader,
}

impl<'a> StoreSnapshots<'a> {
    pub fn new(ps: &'a PhaseSpace, store: &'a StoreReader) -> Result<Self> {
        if store.manifest.descriptor != ps.descriptor() {
            return Err(TrtError::ArchiveMismatch(format!(
                "run directory was produced for `{}`, configuration is `{}`",
                store.manifest.descriptor,
                ps.descriptor()
            )));
        }
        if store.len() < 2 {
            return Err(TrtError::InvalidArgument("run directory holds no time steps".into()));
        }
        Ok(StoreSnapshots { ps, store })
    }

    fn load(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (rec, intensity) = self.store.read(n + 1)?;
        let intensity = intensity.ok_or_else(|| {
            TrtError::InvalidArgument(format!("step {} was stored without intensities", n + 1))
        })?;
        Ok((intensity, rec.phi))
    }
}

impl SnapshotSource for StoreSnapshots<'_> {
    fn len(&self) -> usize {
        self.store.len() - 1
    }
    fn dim(&self) -> usize {
        self.ps.dim()
    }
    fn weight(&self, _n: usize) -> f64 {
        self.store.manifest.dt
    }
    fn column(&self, n: usize) -> Result<Vec<f64>> {
        let (i, phi) = self.load(n)?;
        normalize_with_floor(self.ps, &i, &phi)
    }
    fn phi(&self, n: usize) -> Result<Vec<f64>> {
        Ok(self.store.read(n + 1)?.0.phi)
    }
}

/// Right singular data of `A_hat = W^{1/2} A H^{-1/2}`.
#[derive(Clone, Debug)]
pub struct WeightedSvd {
    /// Positive singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns, `N x r`.
    pub v: DMatrix<f64>,
}

impl WeightedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

fn weighted_column(src: &dyn SnapshotSource, sw: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut c = src.column(n)?;
    check_len("snapshot column", sw.len(), c.len())?;
    let s = 1.0 / src.weight(n).sqrt();
    for (x, w) in c.iter_mut().zip(sw) {
        *x *= w * s;
    }
    Ok(c)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix `A_hat^T A_hat`, holding at most `block` weighted columns at a time.
pub fn gram_matrix(src: &dyn SnapshotSource, w: &WeightMatrix, block: usize) -> Result<DMatrix<f64>> {
    let n = src.len();
    let sw = w.sqrt();
    let block = block.max(1);
    let mut g = DMatrix::zeros(n, n);
    for b0 in (0..n).step_by(block) {
        let b1 = (b0 + block).min(n);
        let cols = (b0..b1)
            .map(|j| weighted_column(src, &sw, j))
            .collect::<Result<Vec<_>>>()?;
        for (a, ca) in cols.iter().enumerate() {
            for (b, cb) in cols.iter().enumerate().skip(a) {
                let v = dot(ca, cb);
                g[(b0 + a, b0 + b)] = v;
                g[(b0 + b, b0 + a)] = v;
            }
        }
        for j in b1..n {
            let cj = weighted_column(src, &sw, j)?;
            let vals: Vec<f64> = cols.par_iter().map(|c| dot(c, &cj)).collect();
            for (a, v) in vals.into_iter().enumerate() {
                g[(b0 + a, j)] = v;
                g[(j, b0 + a)] = v;
            }
        }
    }
    Ok(g)
}

/// Singular values and right vectors from the Gram eigendecomposition.
pub fn svd_from_gram(gram: DMatrix<f64>) -> Result<WeightedSvd> {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    if !(lmax > 0.0) {
        return Err(TrtError::InvalidArgument("snapshot matrix is zero".into()));
    }
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&j| eig.eigenvalues[j] > gram_cutoff(n) * lmax)
        .collect();
    let sigma = keep.iter().map(|&j| eig.eigenvalues[j].sqrt()).collect();
    let v = DMatrix::from_fn(n, keep.len(), |i, c| eig.eigenvectors[(i, keep[c])]);
    Ok(WeightedSvd { sigma, v })
}

/// Weighted thin SVD by the method of snapshots.
pub fn weighted_svd(src: &dyn SnapshotSource, w: &WeightMatrix, block: usize) -> Result<WeightedSvd> {
    svd_from_gram(gram_matrix(src, w, block)?)
}

/// Leading `k` left singular vectors `U_hat = A_hat V S^{-1}`, made
/// orthonormal in the plain 2-norm by two passes of classical Gram-Schmidt.
pub fn left_vectors(src: &dyn SnapshotSource, w: &WeightMatrix, svd: &WeightedSvd, k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > svd.rank() {
        return Err(TrtError::InvalidArgument(format!("rank {k} outside 1..={}", svd.rank())));
    }
    let sw = w.sqrt();
    let d = src.dim();
    let mut u = vec![vec![0.0; d]; k];
    for j in 0..src.len() {
        let cj = weighted_column(src, &sw, j)?;
        u.par_iter_mut().enumerate().for_each(|(l, ul)| {
            let c = svd.v[(j, l)] / svd.sigma[l];
            for (x, y) in ul.iter_mut().zip(&cj) {
                *x += c * y;
            }
        });
    }
    cgs2(&mut u);
    Ok(u)
}

/// Two-pass classical Gram-Schmidt in place.
pub fn cgs2(u: &mut [Vec<f64>]) {
    for l in 0..u.len() {
        let (done, rest) = u.split_at_mut(l);
        let ul = &mut rest[0];
        for _ in 0..2 {
            let coef: Vec<f64> = done.par_iter().map(|q| dot(q, ul)).collect();
            for (q, c) in done.iter().zip(coef) {
                for (x, y) in ul.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let nrm = dot(ul, ul).sqrt();
        if nrm > 0.0 {
            ul.iter_mut().for_each(|x| *x /= nrm);
        }
    }
}

/// Smallest `k` whose discarded energy fraction is at most `xi^2`.
pub fn select_rank(sigma: &[f64], xi: f64) -> Result<usize> {
    if sigma.is_empty() {
        return Err(TrtError::InvalidArgument("no singular values".into()));
    }
    if !(0.0..=1.0).contains(&xi) {
        return Err(TrtError::InvalidArgument(format!("xi = {xi} outside [0, 1]")));
    }
    let r = sigma.len();
    // tail[j] = sum of sigma_l^2 for l >= j, summed from the small end.
    let mut tail = vec![0.0; r + 1];
    for j in (0..r).rev() {
        tail[j] = tail[j + 1] + sigma[j] * sigma[j];
    }
    let total = tail[0];
    Ok((1..=r).find(|&j| tail[j] <= xi * xi * total).unwrap_or(r))
}

/// A truncated basis with everything the online stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct PodBasis {
    pub descriptor: String,
    pub xi: f64,
    pub sigma: Vec<f64>,
    /// `W`-orthonormal basis vectors `u_l`.
    pub u: Vec<Vec<f64>>,
    /// Angular moments of each `u_l`.
    pub moments: Vec<ShapeMoments>,
    /// Zeroth moments of the snapshots, steps `1..=N`.
    pub phi: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl PodBasis {
    pub fn k(&self) -> usize {
        self.u.len()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_snapshots(&self) -> usize {
        self.phi.len()
    }

    /// `sum_l lambda_l u_l`.
    pub fn expand(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.u[0].len()];
        for (l, ul) in self.u.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(ul) {
                *o += lambda[l] * x;
            }
        }
        out
    }

    /// `sum_l lambda_l h_l` and the same for boundary moments.
    pub fn combine_moments(&self, lambda: &[f64]) -> ShapeMoments {
        let mut sm = ShapeMoments {
            h: vec![0.0; self.moments[0].h.len()],
            b: vec![0.0; self.moments[0].b.len()],
        };
        for (l, m) in self.moments.iter().enumerate() {
            sm.axpy(lambda[l], m);
        }
        sm
    }
}

/// Recovers `U = W^{-1/2} U_hat` and its angular moments.
pub fn build_basis(
    ps: &PhaseSpace,
    uhat: Vec<Vec<f64>>,
    w: &WeightMatrix,
    sigma: Vec<f64>,
    xi: f64,
    phi: Vec<Vec<f64>>,
    h: Vec<f64>,
) -> Result<PodBasis> {
    let sw = w.sqrt();
    let u: Vec<Vec<f64>> = uhat
        .into_par_iter()
        .map(|mut v| {
            for (x, s) in v.iter_mut().zip(&sw) {
                *x /= s;
            }
            v
        })
        .collect();
    let moments = u
        .par_iter()
        .map(|ul| shape_moments(ps, ul))
        .collect::<Result<Vec<_>>>()?;
    Ok(PodBasis {
        descriptor: ps.descriptor(),
        xi,
        sigma,
        u,
        moments,
        phi,
        h,
    })
}

/// Offline stage for several tolerances sharing one decomposition.
pub fn offline(
    ps: &PhaseSpace,
    src: &dyn SnapshotSource,
    xis: &[f64],
    block: usize,
) -> Result<(WeightedSvd, Vec<PodBasis>)> {
    let w = ps.weights();
    let svd = weighted_svd(src, &w, block)?;
    let phi = (0..src.len()).map(|n| src.phi(n)).collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = (0..src.len()).map(|n| src.weight(n)).collect();
    let mut out = Vec::with_capacity(xis.len());
    for &xi in xis {
        let k = select_rank(&svd.sigma, xi)?;
        log::info!("xi = {xi:e}: rank {k} of {}", svd.rank());
        let uhat = left_vectors(src, &w, &svd, k)?;
        out.push(build_basis(ps, uhat, &w, svd.sigma.clone(), xi, phi.clone(), h.clone())?);
    }
    Ok((svd, out))
}

pub const BASIS_FORMAT: &str = "trt-rom-basis 1";

/// Writes `header.txt` and `basis.bin` into `dir`.
pub fn write_basis(dir: &Path, b: &PodBasis) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TrtError::io(dir, e))?;
    let d = b.u[0].len();
    let p = b.phi[0].len();
    let header = format!(
        "format = {BASIS_FORMAT}\ndescriptor = {}\nordering = {INDEX_ORDERING}\nendianness = little\n\
         d = {d}\np = {p}\nN = {}\nk = {}\nr = {}\nxi = {:e}\nh_len = {}\nb_len = {}\n\
         arrays = sigma, time weights, U, h, b, Phi\n",
        b.descriptor,
        b.n_snapshots(),
        b.k(),
        b.rank(),
        b.xi,
        b.moments[0].h.len(),
        b.moments[0].b.len()
    );
    let hp = dir.join("header.txt");
    fs::write(&hp, header).map_err(|e| TrtError::io(&hp, e))?;
    let bp = dir.join("basis.bin");
    let ioe = |e| TrtError::io(&bp, e);
    let mut w = BufWriter::new(File::create(&bp).map_err(ioe)?);
    write_f64s(&mut w, &b.sigma).map_err(ioe)?;
    write_f64s(&mut w, &b.h).map_err(ioe)?;
    for u in &b.u {
        write_f64s(&mut w, u).map_err(ioe)?;
    }
    for m in &b.moments {
        write_f64s(&mut w, &m.h).map_err(ioe)?;
    }
    for m in &b.moments {
        write_f64s(&mut w, &m.b).map_err(ioe)?;
    }
    for f in &b.phi {
        write_f64s(&mut w, f).map_err(ioe)?;
    }
    w.flush().map_err(ioe)
}

/// Reads an archive written by [`write_basis`].
pub fn read_basis(dir: &Path) -> Result<PodBasis> {
    let hp = dir.join("header.txt");
    let text = fs::read_to_string(&hp).map_err(|e| TrtError::io(&hp, e))?;
    let (map, _) = parse_header(&text);
    if header_value(&map, "format", &hp)? != BASIS_FORMAT {
        return Err(TrtError::Format {
            path: hp,
            reason: "not a basis archive".into(),
        });
    }
    let d: usize = header_num(&map, "d", &hp)?;
    let p: usize = header_num(&map, "p", &hp)?;
    let n: usize = header_num(&map, "N", &hp)?;
    let k: usize = header_num(&map, "k", &hp)?;
    let r: usize = header_num(&map, "r", &hp)?;
    let hl: usize = header_num(&map, "h_len", &hp)?;
    let bl: usize = header_num(&map, "b_len", &hp)?;
    let xi: f64 = header_num(&map, "xi", &hp)?;
    let bp = dir.join("basis.bin");
    let expected = 8 * (r + n + k * (d + hl + bl) + n * p);
    let actual = fs::metadata(&bp).map_err(|e| TrtError::io(&bp, e))?.len() as usize;
    if actual != expected || k == 0 || n == 0 {
        return Err(TrtError::Format {
            path: bp,
            reason: format!("{actual} bytes, header implies {expected}"),
        });
    }
    let ioe = |e| TrtError::io(&bp, e);
    let mut rd = BufReader::new(File::open(&bp).map_err(ioe)?);
    let sigma = read_f64s(&mut rd, r).map_err(ioe)?;
    let h = read_f64s(&mut rd, n).map_err(ioe)?;
    let u = (0..k).map(|_| read_f64s(&mut rd, d)).collect::<std::io::Result<Vec<_>>>().map_err(ioe)?;
    let hs = (0..k).map(|_| read_f64s(&mut rd, hl)).collect::<std::io::Result<Vec<_>>>().map_err(ioe)?;
    let bs = (0..k).map(|_| read_f64s(&mut rd, bl)).collect::<std::io::Result<Vec<_>>>().map_err(ioe)?;
    let phi = (0..n).map(|_| read_f64s(&mut rd, p)).collect::<std::io::Result<Vec<_>>>().map_err(ioe)?;
    Ok(PodBasis {
        descriptor: header_value(&map, "descriptor", &hp)?.to_string(),
        xi,
        sigma,
        u,
        moments: hs.into_iter().zip(bs).map(|(h, b)| ShapeMoments { h, b }).collect(),
        phi,
        h,
    })
}

/// Checks that an archive belongs to the given phase space.
pub fn check_descriptor(ps: &PhaseSpace, b: &PodBasis) -> Result<()> {
    if b.descriptor != ps.descriptor() {
        return Err(TrtError::ArchiveMismatch(format!(
            "basis archive was built for `{}`, configuration is `{}`",
            b.descriptor,
            ps.descriptor()
        )));
    }
    if b.u[0].len() != ps.dim() || b.phi[0].len() != ps.phi_dim() {
        return Err(TrtError::ArchiveMismatch("basis dimensions differ from the phase space".into()));
    }
    Ok(())
}
