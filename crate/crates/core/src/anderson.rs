//! Anderson mixing for fixed-point maps `x -> g(x)`.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

/// Type-II Anderson acceleration with a bounded history.
#[derive(Clone, Debug)]
pub struct Anderson {
    depth: usize,
    last: Option<(Vec<f64>, Vec<f64>)>,
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
}

impl Anderson {
    pub fn new(depth: usize) -> Self {
        Anderson {
            depth,
            last: None,
            df: VecDeque::new(),
            dg: VecDeque::new(),
        }
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.df.clear();
        self.dg.clear();
    }

    /// Next iterate from the input `x` and its image `g`.
    pub fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((xp, gp)) = self.last.take() {
            let dfk = f
                .iter()
                .zip(gp.iter().zip(&xp))
                .map(|(fi, (gi, xi))| fi - (gi - xi))
                .collect();
            let dgk = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
            self.df.push_back(dfk);
            self.dg.push_back(dgk);
            if self.df.len() > self.depth {
                self.df.pop_front();
                self.dg.pop_front();
            }
        }
        self.last = Some((x.to_vec(), g.to_vec()));
        if self.df.is_empty() {
            return g.to_vec();
        }
        let (n, m) = (f.len(), self.df.len());
        let a = DMatrix::from_fn(n, m, |i, j| self.df[j][i]);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return g.to_vec();
        }
        let gamma = match svd.solve(&DVector::from_vec(f), 1e-12 * smax) {
            Ok(v) => v,
            Err(_) => return g.to_vec(),
        };
        let mut out = g.to_vec();
        for (j, dgj) in self.dg.iter().enumerate() {
            for (o, d) in out.iter_mut().zip(dgj) {
                *o -= gamma[j] * d;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_converges_in_few_steps() {
        // g(x) = A x + b with a slowly contracting A.
        let a = [[0.95, 0.02, 0.0], [0.01, 0.9, 0.03], [0.0, 0.04, 0.97]];
        let b = [1.0, -2.0, 0.5];
        let g = |x: &[f64]| -> Vec<f64> {
            (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + b[i]).collect()
        };
        let mut acc = Anderson::new(5);
        let mut x = vec![0.0; 3];
        let mut it = 0;
        loop {
            let gx = g(&x);
            let r: f64 = gx.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            if r < 1e-13 {
                break;
            }
            x = acc.next(&x, &gx);
            it += 1;
            assert!(it < 20, "stalled at residual {r}");
        }
        let gx = g(&x);
        for i in 0..3 {
            assert!((gx[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_is_plain_picard() {
        let mut acc = Anderson::new(3);
        assert_eq!(acc.next(&[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0]);
        acc.reset();
        assert_eq!(acc.next(&[0.0], &[5.0]), vec![5.0]);
    }
}
