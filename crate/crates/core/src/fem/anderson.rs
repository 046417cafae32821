//! Anderson mixing for fixed-point iterations `x = g(x)`.
//!
//! Affine combinations of past images keep any linear constraint that every
//! image satisfies (boundary values, weak divergence).

use std::collections::VecDeque;

pub struct Anderson {
    depth: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
}

impl Anderson {
    /// `depth = 0` gives the plain iteration `x_{k+1} = g(x_k)`.
    pub fn new(depth: usize) -> Self {
        Anderson {
            depth,
            prev: None,
            df: VecDeque::new(),
            dg: VecDeque::new(),
        }
    }

    /// Next iterate from the current point `x` and its image `g`.
    pub fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        if self.depth == 0 {
            return g.to_vec();
        }
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((fp, gp)) = self.prev.take() {
            self.df
                .push_back(f.iter().zip(&fp).map(|(a, b)| a - b).collect());
            self.dg
                .push_back(g.iter().zip(&gp).map(|(a, b)| a - b).collect());
            if self.df.len() > self.depth {
                self.df.pop_front();
                self.dg.pop_front();
            }
        }
        self.prev = Some((f.clone(), g.to_vec()));
        if self.df.is_empty() {
            return g.to_vec();
        }

        // Least squares min |f - dF gamma| by modified Gram-Schmidt, dropping
        // columns that are numerically dependent on the ones kept.
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut r: Vec<Vec<f64>> = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        for (j, col) in self.df.iter().enumerate() {
            let scale = dot(col, col).sqrt();
            if scale == 0.0 {
                continue;
            }
            let mut v = col.clone();
            let mut rc = Vec::with_capacity(q.len() + 1);
            for qi in &q {
                let h = dot(qi, &v);
                axpy(-h, qi, &mut v);
                rc.push(h);
            }
            let norm = dot(&v, &v).sqrt();
            if norm <= 1e-10 * scale {
                continue;
            }
            v.iter_mut().for_each(|e| *e /= norm);
            rc.push(norm);
            q.push(v);
            r.push(rc);
            kept.push(j);
        }
        if kept.is_empty() {
            return g.to_vec();
        }
        let qtf: Vec<f64> = q.iter().map(|qi| dot(qi, &f)).collect();
        let k = kept.len();
        let mut gamma = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qtf[i];
            for j in i + 1..k {
                s -= r[j][i] * gamma[j];
            }
            gamma[i] = s / r[i][i];
        }
        let mut out = g.to_vec();
        for (gm, &j) in gamma.iter().zip(&kept) {
            axpy(-gm, &self.dg[j], &mut out);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
