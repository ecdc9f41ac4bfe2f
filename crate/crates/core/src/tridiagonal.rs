//! Lowest eigenpairs of symmetric tridiagonal matrices with optional
//! periodic corner entries, via Sturm bisection and inverse iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) struct CyclicTridiagonal {
    diag: Vec<f64>,
    /// `off[i] = A[i, i+1]`.
    off: Vec<f64>,
    /// `A[0, n−1]`, zero for a plain tridiagonal matrix.
    corner: f64,
}

/// `L D Lᵀ` of `A − σI`; the last row of `L` is dense (arrow fill from the corner).
struct Factor {
    d: Vec<f64>,
    chain: Vec<f64>,
    last_row: Vec<f64>,
}

impl CyclicTridiagonal {
    /// Detects the structure in a dense symmetric matrix.
    pub(crate) fn detect(h: &DMatrix<f64>) -> Option<CyclicTridiagonal> {
        let n = h.nrows();
        if n < 4 || h.ncols() != n {
            return None;
        }
        for j in 0..n {
            for i in 0..n {
                let band = i.abs_diff(j) <= 1 || (i == 0 && j == n - 1) || (i == n - 1 && j == 0);
                if !band && h[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(CyclicTridiagonal {
            diag: (0..n).map(|i| h[(i, i)]).collect(),
            off: (0..n - 1).map(|i| h[(i, i + 1)]).collect(),
            corner: h[(0, n - 1)],
        })
    }

    fn n(&self) -> usize {
        self.diag.len()
    }

    fn pivmin(&self) -> f64 {
        let scale = self
            .off
            .iter()
            .chain(std::iter::once(&self.corner))
            .fold(1.0f64, |m, v| m.max(v.abs()));
        f64::MIN_POSITIVE.sqrt() * scale * scale
    }

    fn factor(&self, sigma: f64) -> Factor {
        let n = self.n();
        let pmin = self.pivmin();
        let guard = |x: f64| if x.abs() < pmin { -pmin } else { x };
        let mut d = vec![0.0; n];
        let mut chain = vec![0.0; n.saturating_sub(2)];
        let mut last_row = vec![0.0; n - 1];
        // Couplings of the last row to the chain nodes, updated by elimination.
        let mut r = self.corner;
        let mut s = 0.0;
        d[0] = guard(self.diag[0] - sigma);
        for i in 1..n - 1 {
            let e = self.off[i - 1];
            let l = e / d[i - 1];
            chain[i - 1] = l;
            d[i] = guard(self.diag[i] - sigma - l * e);
            let m = r / d[i - 1];
            last_row[i - 1] = m;
            s += m * r;
            let a = if i == n - 2 { self.off[n - 2] } else { 0.0 };
            r = a - m * e;
        }
        let m = r / d[n - 2];
        last_row[n - 2] = m;
        s += m * r;
        d[n - 1] = guard(self.diag[n - 1] - sigma - s);
        Factor { d, chain, last_row }
    }

    /// Number of eigenvalues strictly below `sigma`.
    fn count_below(&self, sigma: f64) -> usize {
        self.factor(sigma).d.iter().filter(|&&v| v < 0.0).count()
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut rad = 0.0;
            if i > 0 {
                rad += self.off[i - 1].abs();
            }
            if i + 1 < n {
                rad += self.off[i].abs();
            }
            if i == 0 || i == n - 1 {
                rad += self.corner.abs();
            }
            lo = lo.min(self.diag[i] - rad);
            hi = hi.max(self.diag[i] + rad);
        }
        (lo, hi)
    }

    /// The `j`-th smallest eigenvalue (0-based) by bisection.
    fn bisect(&self, j: usize, lo: f64, hi: f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        let pmin = self.pivmin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pmin {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            y[i] = v;
        }
        y[0] += self.corner * x[n - 1];
        y[n - 1] += self.corner * x[0];
        y
    }

    /// Lowest `k` eigenpairs, Euclidean-orthonormal, ascending.
    pub(crate) fn lowest(&self, k: usize) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.n();
        let (glo, ghi) = self.gershgorin();
        let values: Vec<f64> = (0..(k + 1).min(n)).map(|j| self.bisect(j, glo, ghi)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7d1a_9e03);
        let mut out_vals = Vec::with_capacity(k);
        let mut vecs = DMatrix::zeros(n, k);
        let mut start = 0;
        while start < k {
            // Group near-equal eigenvalues and iterate on the whole block.
            let mut end = start + 1;
            while end < k && values[end] - values[end - 1] <= 1e-5 * (1.0 + values[end].abs()) {
                end += 1;
            }
            let g = end - start;
            let center = values[start..end].iter().sum::<f64>() / g as f64;
            let below = if start > 0 { center - values[start - 1] } else { f64::INFINITY };
            let above = if end < values.len() { values[end] - center } else { f64::INFINITY };
            let gap = below.min(above);
            let floor = 1e-12 * (1.0 + center.abs());
            let shift = center - if gap.is_finite() { (1e-2 * gap).max(floor) } else { floor };
            let fac = self.factor(shift);
            let mut block: Vec<DVector<f64>> = (0..g)
                .map(|_| DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5))
                .collect();
            for _ in 0..8 {
                for b in block.iter_mut() {
                    *b = fac.solve(b);
                }
                orthonormalize(&mut block, &vecs, start);
            }
            // Rayleigh–Ritz inside the block.
            let av: Vec<DVector<f64>> = block.iter().map(|b| self.matvec(b)).collect();
            let small = DMatrix::from_fn(g, g, |a, b| 0.5 * (block[a].dot(&av[b]) + block[b].dot(&av[a])));
            let eig = SymmetricEigen::new(small);
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            for (c, &o) in order.iter().enumerate() {
                let mut v = DVector::zeros(n);
                for (a, b) in block.iter().enumerate() {
                    v += b * eig.eigenvectors[(a, o)];
                }
                out_vals.push(eig.eigenvalues[o]);
                vecs.set_column(start + c, &v);
            }
            start = end;
        }
        (out_vals, vecs)
    }
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.d.len();
        let mut y = b.clone();
        for i in 1..n - 1 {
            y[i] -= self.chain[i - 1] * y[i - 1];
        }
        let tail: f64 = (0..n - 1).map(|j| self.last_row[j] * y[j]).sum();
        y[n - 1] -= tail;
        for i in 0..n {
            y[i] /= self.d[i];
        }
        let xl = y[n - 1];
        for i in (0..n - 1).rev() {
            let mut v = y[i] - self.last_row[i] * xl;
            if i + 1 < n - 1 {
                v -= self.chain[i] * y[i + 1];
            }
            y[i] = v;
        }
        y
    }
}

/// Two passes of modified Gram–Schmidt against earlier columns and within the block.
fn orthonormalize(block: &mut [DVector<f64>], prev: &DMatrix<f64>, prev_cols: usize) {
    for _ in 0..2 {
        for a in 0..block.len() {
            for c in 0..prev_cols {
                let p = prev.column(c);
                let proj = p.dot(&block[a]);
                block[a].axpy(-proj, &p, 1.0);
            }
            for b in 0..a {
                let (head, tail) = block.split_at_mut(a);
                let proj = head[b].dot(&tail[0]);
                tail[0].axpy(-proj, &head[b], 1.0);
            }
            let nrm = block[a].norm();
            if nrm > 0.0 {
                block[a] /= nrm;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cyclic(n: usize, seed: u64, periodic: bool) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = 2.0 + rng.random::<f64>();
            if i + 1 < n {
                h[(i, i + 1)] = -1.0;
                h[(i + 1, i)] = -1.0;
            }
        }
        if periodic {
            h[(0, n - 1)] = -1.0;
            h[(n - 1, 0)] = -1.0;
        }
        h
    }

    #[test]
    fn matches_dense_solver() {
        for (seed, periodic) in [(1, true), (2, false), (3, true)] {
            let h = random_cyclic(40, seed, periodic);
            let t = CyclicTridiagonal::detect(&h).unwrap();
            let (vals, vecs) = t.lowest(8);
            let dense = SymmetricEigen::new(h.clone());
            let mut ev: Vec<f64> = dense.eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            for j in 0..8 {
                assert!((vals[j] - ev[j]).abs() < 1e-12 * (1.0 + ev[j].abs()));
                let v = vecs.column(j).into_owned();
                assert!((&h * &v - &v * vals[j]).norm() < 1e-12);
            }
            let gram = vecs.transpose() * &vecs;
            assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-12);
        }
    }

    #[test]
    fn resolves_exact_degeneracy() {
        // Constant diagonal on a cycle: every nonzero mode is double.
        let mut h = random_cyclic(32, 0, true);
        for i in 0..32 {
            h[(i, i)] = 2.0;
        }
        let t = CyclicTridiagonal::detect(&h).unwrap();
        let (vals, vecs) = t.lowest(5);
        assert!((vals[1] - vals[2]).abs() < 1e-12);
        for j in 0..5 {
            let v = vecs.column(j).into_owned();
            assert!((&h * &v - &v * vals[j]).norm() < 1e-12);
        }
        assert!((vecs.transpose() * &vecs - DMatrix::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn rejects_wide_band() {
        let mut h = random_cyclic(10, 4, false);
        h[(0, 2)] = 0.5;
        h[(2, 0)] = 0.5;
        assert!(CyclicTridiagonal::detect(&h).is_none());
    }
}
