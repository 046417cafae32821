//! Sparse matrix kernel: triplet assembly, CSR storage and a direct solver.
//!
//! The direct solver renumbers the unknowns with reverse Cuthill-McKee and
//! runs a banded LU factorization with row partial pivoting on the permuted
//! matrix. Channel meshes are long and thin, so the profile after RCM is
//! narrow and the band factorization is close to optimal fill. Partial
//! pivoting handles the zero pressure block of the saddle-point systems.

use std::collections::VecDeque;
use std::io::{self, Write};

use crate::error::{Result, SimError};

/// Pivots below this fraction of the largest matrix entry are treated as zero.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

/// Coordinate-format entries, duplicates allowed.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, capacity: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            row < self.nrows && col < self.ncols,
            "triplet ({row}, {col}) outside {}x{}",
            self.nrows,
            self.ncols
        );
        self.entries.push((row, col, value));
    }

    /// Appends another buffer of the same shape (merging per-producer buffers).
    pub fn extend(&mut self, other: Triplets) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }
}

/// Compressed sparse row matrix with strictly increasing columns per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    /// Index into `values` of the stored entry `(i, j)`, if present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_offsets[i];
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Same pattern with every value set to zero.
    pub fn zeroed(&self) -> CsrMatrix {
        CsrMatrix {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols {
            return Err(SimError::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        if y.len() != self.nrows {
            return Err(SimError::DimensionMismatch {
                expected: self.nrows,
                found: y.len(),
            });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
        Ok(())
    }

    /// `x^T A y` for square or rectangular `A`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ay = self.mul_vec(y)?;
        if x.len() != ay.len() {
            return Err(SimError::DimensionMismatch {
                expected: ay.len(),
                found: x.len(),
            });
        }
        Ok(x.iter().zip(&ay).map(|(a, b)| a * b).sum())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push(j, i, v);
            }
        }
        to_csr(&t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Compresses triplets into CSR, summing duplicates in insertion order.
/// Explicit zeros are kept as stored entries.
pub fn to_csr(t: &Triplets) -> CsrMatrix {
    let mut counts = vec![0usize; t.nrows + 1];
    for &(r, _, _) in &t.entries {
        counts[r + 1] += 1;
    }
    for i in 0..t.nrows {
        counts[i + 1] += counts[i];
    }
    // bucket by row, preserving insertion order
    let mut next = counts.clone();
    let mut bucket = vec![(0usize, 0.0f64); t.entries.len()];
    for &(r, c, v) in &t.entries {
        bucket[next[r]] = (c, v);
        next[r] += 1;
    }

    let mut row_offsets = Vec::with_capacity(t.nrows + 1);
    let mut col_indices = Vec::with_capacity(t.entries.len());
    let mut values = Vec::with_capacity(t.entries.len());
    row_offsets.push(0);
    for i in 0..t.nrows {
        let row = &mut bucket[counts[i]..counts[i + 1]];
        row.sort_by_key(|&(c, _)| c);
        for &(c, v) in row.iter() {
            if col_indices.len() > row_offsets[i] && *col_indices.last().unwrap() == c {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
            }
        }
        row_offsets.push(col_indices.len());
    }
    CsrMatrix {
        nrows: t.nrows,
        ncols: t.ncols,
        row_offsets,
        col_indices,
        values,
    }
}

/// `||A x - rhs||_2`.
pub fn residual_norm(a: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Result<f64> {
    if rhs.len() != a.nrows {
        return Err(SimError::DimensionMismatch {
            expected: a.nrows,
            found: rhs.len(),
        });
    }
    let ax = a.mul_vec(x)?;
    Ok(ax
        .iter()
        .zip(rhs)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt())
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric renumbering plus the band widths it produces for one sparsity
/// pattern. Reusable for every matrix sharing that pattern.
#[derive(Clone, Debug)]
pub struct BandOrdering {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv_perm[old] = new`
    inv_perm: Vec<usize>,
    lower: usize,
    upper: usize,
}

impl BandOrdering {
    /// Reverse Cuthill-McKee ordering of the symmetrized pattern of `a`.
    pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(SimError::DimensionMismatch {
                expected: a.nrows,
                found: a.ncols,
            });
        }
        let n = a.nrows;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in a.row(i).0 {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for nb in adj.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
        }
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        // visit components in order of their lowest-degree unvisited vertex
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&v| (degree[v], v));
        for &seed in &by_degree {
            if visited[seed] {
                continue;
            }
            let start = pseudo_peripheral(seed, &adj, &degree);
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> =
                    adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        Ok(Self::from_permutation(a, order))
    }

    /// Identity ordering (no renumbering).
    pub fn natural(a: &CsrMatrix) -> Self {
        Self::from_permutation(a, (0..a.nrows).collect())
    }

    fn from_permutation(a: &CsrMatrix, perm: Vec<usize>) -> Self {
        let mut inv_perm = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let (mut lower, mut upper) = (0, 0);
        for r in 0..a.nrows {
            let i = inv_perm[r];
            for &c in a.row(r).0 {
                let j = inv_perm[c];
                if i > j {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        BandOrdering {
            perm,
            inv_perm,
            lower,
            upper,
        }
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.lower
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut current = seed;
    let mut eccentricity = bfs_levels(current, adj).len();
    loop {
        let levels = bfs_levels(current, adj);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .unwrap();
        let ecc = bfs_levels(candidate, adj).len();
        if ecc <= eccentricity {
            return current;
        }
        current = candidate;
        eccentricity = ecc;
    }
}

/// Banded LU factors `P A_perm = L U` in LAPACK `gbtrf` layout.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix, ordering: &BandOrdering) -> Result<Self> {
        let n = a.nrows;
        if a.ncols != n {
            return Err(SimError::DimensionMismatch {
                expected: n,
                found: a.ncols,
            });
        }
        if ordering.len() != n {
            return Err(SimError::DimensionMismatch {
                expected: n,
                found: ordering.len(),
            });
        }
        let (kl, ku) = (ordering.lower, ordering.upper);
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for r in 0..n {
            let i = ordering.inv_perm[r];
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = ordering.inv_perm[c];
                ab[j * ldab + kv + i - j] = v;
            }
        }
        let threshold = PIVOT_THRESHOLD * a.max_abs();
        let mut pivots = vec![0; n];

        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for i in 1..=km {
                let v = ab[col + i].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            pivots[j] = j + jp;
            if !(best > threshold) {
                return Err(SimError::SingularMatrix {
                    column: ordering.perm[j],
                    pivot: best,
                });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(c * ldab + kv + j - c, c * ldab + kv + j + jp - c);
                }
            }
            if km > 0 {
                let inv = 1.0 / ab[col];
                for v in &mut ab[col + 1..=col + km] {
                    *v *= inv;
                }
                for c in j + 1..=ju {
                    let base = c * ldab + kv + j - c;
                    let (head, tail) = ab.split_at_mut(base);
                    let ajc = tail[0];
                    if ajc != 0.0 {
                        let l = &head[col + 1..=col + km];
                        for (t, &li) in tail[1..=km].iter_mut().zip(l) {
                            *t -= li * ajc;
                        }
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            pivots,
            perm: ordering.perm.clone(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(SimError::DimensionMismatch {
                expected: n,
                found: rhs.len(),
            });
        }
        let (kl, kv, ldab) = (self.kl, self.kl + self.ku, self.ldab);
        let mut b: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            let km = kl.min(n - 1 - j);
            if km > 0 && bj != 0.0 {
                let col = j * ldab + kv;
                for (bi, &l) in b[j + 1..=j + km]
                    .iter_mut()
                    .zip(&self.ab[col + 1..=col + km])
                {
                    *bi -= l * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[j * ldab + kv];
            let bj = b[j];
            if bj != 0.0 {
                let i0 = j.saturating_sub(kv);
                let start = j * ldab + kv + i0 - j;
                for (bi, &u) in b[i0..j].iter_mut().zip(&self.ab[start..start + (j - i0)]) {
                    *bi -= u * bj;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = b[new];
        }
        Ok(x)
    }

    /// Solves and applies up to three steps of iterative refinement until
    /// `||A x - rhs|| <= 1e-10 (1 + ||rhs||)`.
    pub fn solve_refined(&self, a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.solve(rhs)?;
        let bound = 1e-10 * (1.0 + norm2(rhs));
        for _ in 0..3 {
            let ax = a.mul_vec(&x)?;
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
            if norm2(&r) <= bound {
                break;
            }
            let dx = self.solve(&r)?;
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Ok(x)
    }
}

/// One-shot direct solve of `A x = rhs`.
pub fn factor_and_solve(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != a.nrows {
        return Err(SimError::DimensionMismatch {
            expected: a.nrows,
            found: rhs.len(),
        });
    }
    let ordering = BandOrdering::reverse_cuthill_mckee(a)?;
    let lu = BandLu::factor(a, &ordering)?;
    lu.solve_refined(a, rhs)
}
