//! Low spectrum of `−Δ_h + q`, eigenvalue clusters and potential recovery.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::{BoundaryCondition, DomainGrid, DomainKind, Potential};
use crate::error::{check_len, Error, Result};
use crate::tridiagonal::CyclicTridiagonal;

/// Default relative tolerance used to group near-equal eigenvalues.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

/// Eigenpairs of a discretized Schrödinger operator.
///
/// Columns of `eigenvectors` are orthonormal in the grid's weighted inner
/// product, and eigenvalues are ascending.
#[derive(Debug, Clone)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    weights: DVector<f64>,
    volume: f64,
    matrix_dim: usize,
    grid_id: u64,
    potential_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based index of the first eigenvalue in the cluster.
    pub first_index: usize,
    pub multiplicity: usize,
    pub value: f64,
    pub tol_used: f64,
    /// The run reached the last retained eigenvalue, so the cluster may continue.
    pub truncated: bool,
}

impl Cluster {
    pub fn last_index(&self) -> usize {
        self.first_index + self.multiplicity - 1
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.first_index..=self.last_index()).contains(&i)
    }

    /// 0-based rank of `i` inside the cluster.
    pub fn rank_of(&self, i: usize) -> usize {
        debug_assert!(self.contains(i));
        i - self.first_index
    }

    pub fn is_simple(&self) -> bool {
        self.multiplicity == 1
    }

    pub fn position(&self, i: usize) -> ClusterPosition {
        match (i == self.first_index, i == self.last_index()) {
            (true, true) => ClusterPosition::Simple,
            (true, false) => ClusterPosition::First,
            (false, true) => ClusterPosition::Last,
            (false, false) => ClusterPosition::Interior,
        }
    }

    pub(crate) fn ensure_complete(&self) -> Result<()> {
        if self.truncated {
            return Err(Error::IncompleteCluster {
                index: self.first_index,
                k: self.last_index(),
            });
        }
        Ok(())
    }
}

/// Where an index sits inside its eigenvalue cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterPosition {
    Simple,
    First,
    Last,
    Interior,
}

impl ClusterPosition {
    /// First or last of its cluster: the case where the cone condition is
    /// both necessary and sufficient for criticality.
    pub fn is_extremal(self) -> bool {
        !matches!(self, ClusterPosition::Interior)
    }
}

fn fingerprint<'a>(values: impl Iterator<Item = &'a f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

pub fn grid_fingerprint(grid: &DomainGrid) -> u64 {
    let mut h = DefaultHasher::new();
    grid.n_nodes().hash(&mut h);
    grid.bc().hash(&mut h);
    fingerprint(grid.laplacian().iter()).hash(&mut h);
    h.finish()
}

/// `H = −Δ_h + diag(q)`.
pub fn assemble(grid: &DomainGrid, q: &Potential) -> Result<DMatrix<f64>> {
    check_len(grid.n_nodes(), q.len())?;
    let mut h = grid.laplacian().clone();
    for (k, v) in q.values().iter().enumerate() {
        h[(k, k)] += v;
    }
    Ok(h)
}

/// The `k` lowest eigenpairs of `h`, normalized in the grid's inner product.
pub fn eigensolve(grid: &DomainGrid, h: &DMatrix<f64>, k: usize) -> Result<SpectralData> {
    let n = grid.n_nodes();
    if h.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: h.nrows() });
    }
    if k == 0 || k > n {
        return Err(Error::Index { index: k, max: n });
    }
    if let Some(t) = CyclicTridiagonal::detect(h) {
        let (vals, euclid) = t.lowest(k);
        if let Ok(spec) = finish(grid, h, vals, euclid, 1e-10) {
            return Ok(spec);
        }
    }
    let (vals, euclid) = dense_lowest(h, k)?;
    finish(grid, h, vals, euclid, 1e-8)
}

fn finish(grid: &DomainGrid, h: &DMatrix<f64>, vals: Vec<f64>, euclid: DMatrix<f64>, tol: f64) -> Result<SpectralData> {
    let k = vals.len();
    let n = grid.n_nodes();

    // Uniform weights: w-orthonormal vectors are the Euclidean ones scaled by 1/√w.
    let weights = grid.weights().clone();
    let mut vecs = euclid;
    for mut col in vecs.column_iter_mut() {
        for (r, v) in col.iter_mut().enumerate() {
            *v /= weights[r].sqrt();
        }
    }

    let mut spec = SpectralData {
        eigenvalues: vals,
        eigenvectors: vecs,
        weights,
        volume: grid.volume(),
        matrix_dim: n,
        grid_id: grid_fingerprint(grid),
        potential_id: fingerprint(h.diagonal().iter()),
    };
    spec.reorthonormalize_clusters(DEFAULT_CLUSTER_TOL);
    spec.fix_signs();

    let mut worst: f64 = 0.0;
    for i in 0..k {
        let f = spec.eigenvectors.column(i).into_owned();
        let r = h * &f - &f * spec.eigenvalues[i];
        let res = grid.norm(&r) / (1.0 + spec.eigenvalues[i].abs());
        worst = worst.max(res);
    }
    if !(worst <= tol) {
        return Err(Error::Numerical {
            message: format!("eigenpair residual above {tol:e}·(1+|λ|)"),
            residual: worst,
        });
    }
    Ok(spec)
}

fn dense_lowest(h: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 0).ok_or_else(|| Error::Numerical {
        message: "symmetric eigensolver did not converge".into(),
        residual: f64::NAN,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Assemble and solve in one go.
pub fn solve(grid: &DomainGrid, q: &Potential, k: usize) -> Result<SpectralData> {
    let h = assemble(grid, q)?;
    eigensolve(grid, &h, k)
}

/// Maximal run of eigenvalues within `tol_rel·(1+|λ_i|)` of `λ_i`.
pub fn detect_cluster(spec: &SpectralData, i: usize, tol_rel: f64) -> Result<Cluster> {
    let k = spec.len();
    if i == 0 || i > k {
        return Err(Error::Index { index: i, max: k });
    }
    if !(tol_rel > 0.0) {
        return Err(Error::Config(format!("cluster tolerance must be positive, got {tol_rel}")));
    }
    let ev = &spec.eigenvalues;
    let lam = ev[i - 1];
    let tol = tol_rel * (1.0 + lam.abs());
    let mut lo = i - 1;
    while lo > 0 && (ev[lo - 1] - lam).abs() <= tol {
        lo -= 1;
    }
    let mut hi = i - 1;
    while hi + 1 < k && (ev[hi + 1] - lam).abs() <= tol {
        hi += 1;
    }
    let truncated = hi + 1 == k && k < spec.matrix_dim;
    Ok(Cluster {
        first_index: lo + 1,
        multiplicity: hi - lo + 1,
        value: lam,
        tol_used: tol,
        truncated,
    })
}

impl SpectralData {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_i`, 1-based.
    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.eigenvalues[i - 1]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `f_i`, 1-based.
    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i - 1).into_owned()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn potential_id(&self) -> u64 {
        self.potential_id
    }

    /// Orthonormal basis of the cluster, one function per column.
    pub fn cluster_basis(&self, cluster: &Cluster) -> DMatrix<f64> {
        self.eigenvectors
            .columns(cluster.first_index - 1, cluster.multiplicity)
            .into_owned()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    fn reorthonormalize_clusters(&mut self, tol_rel: f64) {
        let k = self.len();
        let mut i = 1;
        while i <= k {
            let c = detect_cluster(self, i, tol_rel).expect("index in range");
            if c.multiplicity > 1 {
                let start = c.first_index - 1;
                for a in start..start + c.multiplicity {
                    for b in start..a {
                        let fb = self.eigenvectors.column(b).into_owned();
                        let fa = self.eigenvectors.column(a).into_owned();
                        let p = self.inner(&fa, &fb);
                        self.eigenvectors.column_mut(a).axpy(-p, &fb, 1.0);
                    }
                    let fa = self.eigenvectors.column(a).into_owned();
                    let nrm = self.inner(&fa, &fa).sqrt();
                    self.eigenvectors.column_mut(a).scale_mut(1.0 / nrm);
                }
            }
            i = c.last_index() + 1;
        }
    }

    /// Make the entry of largest magnitude positive (first one on ties).
    fn fix_signs(&mut self) {
        for mut col in self.eigenvectors.column_iter_mut() {
            let mut best = 0usize;
            for (r, v) in col.iter().enumerate() {
                if v.abs() > col[best].abs() * (1.0 + 1e-9) {
                    best = r;
                }
            }
            if col[best] < 0.0 {
                col.neg_mut();
            }
        }
    }

    /// Eigenvalues as a JSON array.
    pub fn write_eigenvalues_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.eigenvalues)?;
        Ok(())
    }

    /// One CSV column per retained mode, header `f1,f2,…`.
    pub fn write_eigenvectors_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let k = self.len();
        let header: Vec<String> = (1..=k).map(|i| format!("f{i}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.eigenvectors.row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Second-order discrete gradient of a node function, one vector per axis.
pub fn discrete_gradient(grid: &DomainGrid, f: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = grid.n_nodes();
    check_len(n, f.len())?;
    let [hx, hy] = grid.spacing();
    match (grid.kind(), grid.bc()) {
        (DomainKind::Circle { .. }, _) => {
            let g = DVector::from_fn(n, |k, _| (f[(k + 1) % n] - f[(k + n - 1) % n]) / (2.0 * hx));
            Ok(vec![g])
        }
        (DomainKind::Torus2D { .. }, _) => {
            let [nx, ny] = grid.shape();
            let idx = |ix: usize, iy: usize| iy * nx + ix;
            let gx = DVector::from_fn(n, |k, _| {
                let (ix, iy) = (k % nx, k / nx);
                (f[idx((ix + 1) % nx, iy)] - f[idx((ix + nx - 1) % nx, iy)]) / (2.0 * hx)
            });
            let gy = DVector::from_fn(n, |k, _| {
                let (ix, iy) = (k % nx, k / nx);
                (f[idx(ix, (iy + 1) % ny)] - f[idx(ix, (iy + ny - 1) % ny)]) / (2.0 * hy)
            });
            Ok(vec![gx, gy])
        }
        (DomainKind::Interval { .. }, BoundaryCondition::Dirichlet) => {
            // Boundary values are zero and sit one step outside the node range.
            let at = |k: isize| if k < 0 || k >= n as isize { 0.0 } else { f[k as usize] };
            let g = DVector::from_fn(n, |k, _| (at(k as isize + 1) - at(k as isize - 1)) / (2.0 * hx));
            Ok(vec![g])
        }
        (DomainKind::Interval { .. }, _) => {
            let g = DVector::from_fn(n, |k, _| {
                if k == 0 {
                    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * hx)
                } else if k == n - 1 {
                    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * hx)
                } else {
                    (f[k + 1] - f[k - 1]) / (2.0 * hx)
                }
            });
            Ok(vec![g])
        }
    }
}

/// `q = λ − Σ_j |∇_h f_j|²` for a frame with `Σ_j f_j² = 1`.
pub fn recover_potential(frame: &[DVector<f64>], lambda: f64, grid: &DomainGrid) -> Result<Potential> {
    let n = grid.n_nodes();
    if frame.is_empty() {
        return Err(Error::Precondition("empty eigenfunction frame".into()));
    }
    let mut sum_sq = DVector::zeros(n);
    let mut grad_sq = DVector::zeros(n);
    for f in frame {
        check_len(n, f.len())?;
        sum_sq += f.component_mul(f);
        for g in discrete_gradient(grid, f)? {
            grad_sq += g.component_mul(&g);
        }
    }
    let dev = sum_sq.add_scalar(-1.0).amax();
    if dev > 1e-6 {
        return Err(Error::Precondition(format!(
            "frame does not satisfy Σf² = 1 (sup deviation {dev:e})"
        )));
    }
    Potential::new(grid, grad_sq.map(|g| lambda - g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use std::f64::consts::PI;

    fn circle(n: usize) -> DomainGrid {
        build_grid(DomainKind::Circle { circumference: 2.0 * PI }, n, BoundaryCondition::Closed).unwrap()
    }

    #[test]
    fn zero_potential_assembles_laplacian() {
        let g = circle(16);
        let h = assemble(&g, &Potential::zero(&g)).unwrap();
        assert_eq!(&h, g.laplacian());
    }

    #[test]
    fn circle_low_modes() {
        let g = circle(256);
        let s = solve(&g, &Potential::zero(&g), 5).unwrap();
        let ev = s.eigenvalues();
        assert!(ev[0].abs() < 1e-10);
        assert!((ev[1] - 1.0).abs() < 1e-3 && (ev[2] - 1.0).abs() < 1e-3);
        assert!((ev[3] - 4.0).abs() < 1e-3 && (ev[4] - 4.0).abs() < 1e-3);
    }

    #[test]
    fn clusters_on_circle() {
        let g = circle(64);
        let s = solve(&g, &Potential::zero(&g), 6).unwrap();
        let c2 = detect_cluster(&s, 2, 1e-6).unwrap();
        assert_eq!((c2.first_index, c2.multiplicity), (2, 2));
        let c3 = detect_cluster(&s, 3, 1e-6).unwrap();
        assert_eq!(c2.first_index, c3.first_index);
        assert_eq!(c3.multiplicity, 2);
        assert_eq!(c2.position(2), ClusterPosition::First);
        assert_eq!(c2.position(3), ClusterPosition::Last);
        assert!(!c2.truncated);
    }

    #[test]
    fn truncation_flagged() {
        let g = circle(64);
        let s = solve(&g, &Potential::zero(&g), 2).unwrap();
        let c = detect_cluster(&s, 2, 1e-6).unwrap();
        assert!(c.truncated);
        assert!(c.ensure_complete().is_err());
    }

    #[test]
    fn dirichlet_ground_state_simple() {
        let g = build_grid(DomainKind::Interval { length: PI }, 64, BoundaryCondition::Dirichlet).unwrap();
        let s = solve(&g, &Potential::zero(&g), 3).unwrap();
        let c = detect_cluster(&s, 1, 1e-6).unwrap();
        assert_eq!((c.first_index, c.multiplicity), (1, 1));
    }

    #[test]
    fn constant_frame_recovers_constant() {
        let g = circle(32);
        let frame = vec![DVector::from_element(32, 1.0)];
        let q = recover_potential(&frame, 2.5, &g).unwrap();
        assert!(q.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn broken_frame_rejected() {
        let g = circle(32);
        let frame = vec![DVector::from_element(32, 1.1f64.sqrt())];
        assert!(matches!(recover_potential(&frame, 0.0, &g), Err(Error::Precondition(_))));
    }

    #[test]
    fn eigenvector_csv_layout() {
        let g = circle(8);
        let s = solve(&g, &Potential::zero(&g), 3).unwrap();
        let mut buf = Vec::new();
        s.write_eigenvectors_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("f1,f2,f3"));
        assert_eq!(text.lines().count(), 9);
    }
}
