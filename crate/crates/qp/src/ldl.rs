//! Sparse LDLᵀ factorization for quasi-definite matrices.
//!
//! Up-looking elimination over the elimination tree, no numerical pivoting.
//! The expected sign of every pivot is supplied by the caller; pivots that
//! come out with the wrong sign or too close to zero are replaced by a small
//! value of the right sign (dynamic regularization), which keeps the
//! factorization usable on rank-deficient KKT systems. Callers recover the
//! lost accuracy by iterative refinement against the unregularized matrix.

use crate::ordering;

const NONE: usize = usize::MAX;

/// Ordering, elimination tree and storage layout for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// For every input entry, its slot in the permuted upper CSC storage.
    slot: Vec<usize>,
    etree: Vec<usize>,
    l_ptr: Vec<usize>,
}

impl Symbolic {
    /// Analyzes the pattern of a symmetric `n x n` matrix given by its upper
    /// triangle entries `(i, j)` with `i <= j`. Entries must be unique; every
    /// column should carry its diagonal.
    pub fn analyze(n: usize, upper: &[(usize, usize)]) -> Self {
        let perm = ordering::minimum_degree(n, upper.iter().copied());
        let pinv = ordering::invert(&perm);

        let permuted: Vec<(usize, usize)> = upper
            .iter()
            .map(|&(i, j)| {
                debug_assert!(i <= j);
                let (a, b) = (pinv[i], pinv[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        let mut order: Vec<usize> = (0..permuted.len()).collect();
        order.sort_by_key(|&k| (permuted[k].1, permuted[k].0));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(permuted.len());
        let mut slot = vec![0usize; permuted.len()];
        for (s, &k) in order.iter().enumerate() {
            let (r, c) = permuted[k];
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            slot[k] = s;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }

        // Elimination tree and column counts of L.
        let mut work = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut etree = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in col_ptr[j]..col_ptr[j + 1] {
                let mut i = row_idx[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for i in 0..n {
            l_ptr[i + 1] = l_ptr[i] + lnz[i];
        }

        Self {
            n,
            perm,
            col_ptr,
            row_idx,
            slot,
            etree,
            l_ptr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.l_ptr[self.n]
    }
}

/// Numeric factor `P K Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct Factor {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d_inv: Vec<f64>,
    /// Number of pivots replaced by the dynamic regularization.
    pub regularized: usize,
}

/// Pivot thresholds for the dynamic regularization.
#[derive(Debug, Clone, Copy)]
pub struct PivotGuard {
    pub eps: f64,
    pub delta: f64,
}

impl Default for PivotGuard {
    fn default() -> Self {
        Self {
            eps: 1e-13,
            delta: 1e-7,
        }
    }
}

impl Factor {
    /// Factors the matrix whose upper-triangle values are given in the same
    /// order as the entries passed to [`Symbolic::analyze`]. `signs[i]` is the
    /// expected pivot sign (`+1` or `-1`) of original index `i`.
    pub fn new(sym: &Symbolic, values: &[f64], signs: &[f64], guard: PivotGuard) -> Self {
        let n = sym.n;
        assert_eq!(values.len(), sym.slot.len());
        assert_eq!(signs.len(), n);
        let mut a_val = vec![0.0; sym.row_idx.len()];
        for (k, &v) in values.iter().enumerate() {
            a_val[sym.slot[k]] += v;
        }

        let nnz_l = sym.nnz_l();
        let mut l_idx = vec![0usize; nnz_l];
        let mut l_val = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut d_inv = vec![0.0; n];
        let mut next_in_col: Vec<usize> = sym.l_ptr[..n].to_vec();
        let mut y_val = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut regularized = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            d[k] = 0.0;
            for p in sym.col_ptr[k]..sym.col_ptr[k + 1] {
                let b = sym.row_idx[p];
                if b == k {
                    d[k] += a_val[p];
                    continue;
                }
                y_val[b] += a_val[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut n_elim = 1;
                    let mut next = sym.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[n_elim] = next;
                        n_elim += 1;
                        next = sym.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let end = next_in_col[c];
                let yc = y_val[c];
                for j in sym.l_ptr[c]..end {
                    y_val[l_idx[j]] -= l_val[j] * yc;
                }
                l_idx[end] = k;
                let lk = yc * d_inv[c];
                l_val[end] = lk;
                d[k] -= yc * lk;
                next_in_col[c] += 1;
                y_val[c] = 0.0;
                y_used[c] = false;
            }
            let sign = signs[sym.perm[k]];
            if sign * d[k] < guard.eps {
                d[k] = sign * guard.delta;
                regularized += 1;
            }
            d_inv[k] = 1.0 / d[k];
        }

        Self {
            l_idx,
            l_val,
            d_inv,
            regularized,
        }
    }

    /// Solves `K x = b` in place.
    pub fn solve(&self, sym: &Symbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[sym.perm[i]]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in sym.l_ptr[i]..sym.l_ptr[i + 1] {
                    x[self.l_idx[j]] -= self.l_val[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.d_inv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in sym.l_ptr[i]..sym.l_ptr[i + 1] {
                acc -= self.l_val[j] * x[self.l_idx[j]];
            }
            x[i] = acc;
        }
        for i in 0..n {
            b[sym.perm[i]] = x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper_of(dense: &[Vec<f64>]) -> (Vec<(usize, usize)>, Vec<f64>) {
        let n = dense.len();
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                if dense[i][j] != 0.0 || i == j {
                    entries.push((i, j));
                    values.push(dense[i][j]);
                }
            }
        }
        (entries, values)
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [P A^T; A -d I] with P SPD.
        let k = vec![
            vec![4.0, 1.0, 0.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5, 1.0, 1.0],
            vec![0.0, 0.5, 2.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0, -1e-3, 0.0],
            vec![0.0, 1.0, 1.0, 0.0, -1e-3],
        ];
        let (entries, values) = upper_of(&k);
        let sym = Symbolic::analyze(5, &entries);
        let signs = [1.0, 1.0, 1.0, -1.0, -1.0];
        let f = Factor::new(&sym, &values, &signs, PivotGuard::default());
        assert_eq!(f.regularized, 0);
        let x_true = [1.0, -2.0, 0.5, 3.0, -1.0];
        let mut b: Vec<f64> = k
            .iter()
            .map(|row| row.iter().zip(x_true.iter()).map(|(a, x)| a * x).sum())
            .collect();
        f.solve(&sym, &mut b);
        for (xi, ti) in b.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-10, "{xi} vs {ti}");
        }
    }

    #[test]
    fn zero_pivot_is_regularized() {
        let k = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        let (entries, values) = upper_of(&k);
        let sym = Symbolic::analyze(2, &entries);
        let f = Factor::new(&sym, &values, &[1.0, -1.0], PivotGuard::default());
        // Eliminating either index first leaves a negative pivot, no repair needed.
        assert_eq!(f.regularized, 0);
        let g = Factor::new(&sym, &[0.0, 0.0, 0.0], &[1.0, -1.0], PivotGuard::default());
        assert_eq!(g.regularized, 2);
    }
}
