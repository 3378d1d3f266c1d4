//! Banded LU factorization with partial pivoting.

use crate::error::{Result, TrtError};

/// Square matrix with `kl` sub-diagonals and `ku` super-diagonals.
///
/// Row `r` stores columns `r - kl ..= r + kl + ku`; the extra `kl`
/// super-diagonals absorb fill-in from row interchanges.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    /// Builds a band matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut kl = 0;
        let mut ku = 0;
        for &(r, c, _) in triplets {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let mut m = BandMatrix::new(n, kl, ku);
        for &(r, c, v) in triplets {
            m.add(r, c, v);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn pos(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(
            r < self.n && c < self.n && c + self.kl >= r && c <= r + self.ku,
            "entry ({r},{c}) outside band"
        );
        let p = self.pos(r, c);
        self.data[p] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.kl + self.ku || r >= self.n || c >= self.n {
            0.0
        } else {
            self.data[self.pos(r, c)]
        }
    }

    /// Solves `A x = b`, consuming the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.pos(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.pos(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(TrtError::Singular("banded system"));
            }
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (a, bb) = (self.pos(k, c), self.pos(p, c));
                    self.data.swap(a, bb);
                }
                x.swap(k, p);
            }
            let w = self.width;
            let kb = self.pos(k, k);
            let piv = self.data[kb];
            let len = last_col - k;
            for r in k + 1..=last_row {
                let (top, bot) = self.data.split_at_mut(r * w);
                let rk = k + self.kl - r;
                let f = bot[rk] / piv;
                if f == 0.0 {
                    continue;
                }
                bot[rk] = 0.0;
                let src = &top[kb + 1..=kb + len];
                for (d, s) in bot[rk + 1..=rk + len].iter_mut().zip(src) {
                    *d -= f * s;
                }
                x[r] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let len = (k + reach).min(n - 1) - k;
            let kb = self.pos(k, k);
            let row = &self.data[kb + 1..=kb + len];
            let s: f64 = row.iter().zip(&x[k + 1..=k + len]).map(|(a, b)| a * b).sum();
            x[k] = (x[k] - s) / self.data[kb];
        }
        Ok(x)
    }
}
