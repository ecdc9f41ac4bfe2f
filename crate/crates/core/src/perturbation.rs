//! First variation of eigenvalues under potential perturbations.
//!
//! For `t ↦ λ_i(q + t u)` the derivative at a simple eigenvalue is
//! `Σ w u f_i²`. On an eigenvalue cluster of multiplicity `m`, the analytic
//! branches through the cluster have slopes equal to the eigenvalues of the
//! `m × m` matrix `M_ab = Σ w u f_a f_b` taken over any orthonormal basis of
//! the cluster. Which branch `λ_i` follows on each side of `t = 0` depends on
//! the rank of `i` inside the cluster:
//!
//! ```text
//! r = i − first_index            μ_1 ≤ … ≤ μ_m  (eigenvalues of M)
//! right derivative = μ_{r+1}     left derivative = μ_{m−r}
//! ```
//!
//! so the first index of a cluster goes right along the smallest slope and
//! left along the largest one, and the last index does the opposite.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{mean_value, project_mean_zero, BoundaryCondition, DomainGrid, DomainKind};
use crate::error::{check_len, Error, Result};
use crate::spectral::{detect_cluster, Cluster, ClusterPosition, SpectralData, DEFAULT_CLUSTER_TOL};

/// Mean-zero perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDirection {
    values: DVector<f64>,
    sup_norm: f64,
}

impl ProbeDirection {
    /// Project `values` onto the mean-zero subspace.
    pub fn project(grid: &DomainGrid, values: &DVector<f64>) -> Result<ProbeDirection> {
        let values = project_mean_zero(grid, values)?;
        let sup_norm = values.amax();
        Ok(ProbeDirection { values, sup_norm })
    }

    /// Wrap values that are already mean zero; fails otherwise.
    pub fn new(grid: &DomainGrid, values: DVector<f64>) -> Result<ProbeDirection> {
        let mean = mean_value(grid, &values)?;
        let sup_norm = values.amax();
        if mean.abs() > 1e-12 * sup_norm.max(1.0) {
            return Err(Error::Precondition(format!("probe direction has mean {mean:e}")));
        }
        Ok(ProbeDirection { values, sup_norm })
    }

    /// Projected and rescaled to unit sup norm (left at zero if it vanishes).
    pub fn normalized(grid: &DomainGrid, values: &DVector<f64>) -> Result<ProbeDirection> {
        let mut p = ProbeDirection::project(grid, values)?;
        if p.sup_norm > 0.0 {
            p.values /= p.sup_norm;
            p.sup_norm = p.values.amax();
        }
        Ok(p)
    }

    pub(crate) fn from_parts(values: DVector<f64>, sup_norm: f64) -> ProbeDirection {
        ProbeDirection { values, sup_norm }
    }

    pub fn zero(grid: &DomainGrid) -> ProbeDirection {
        ProbeDirection {
            values: DVector::zeros(grid.n_nodes()),
            sup_norm: 0.0,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn scaled(&self, s: f64) -> ProbeDirection {
        ProbeDirection {
            values: &self.values * s,
            sup_norm: self.sup_norm * s.abs(),
        }
    }
}

impl Deref for ProbeDirection {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.values
    }
}

/// `Σ w u f g`.
fn weighted_triple(w: &DVector<f64>, u: &DVector<f64>, f: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..w.len() {
        s += w[k] * u[k] * f[k] * g[k];
    }
    s
}

/// `Σ w u f_i²` for a simple eigenvalue.
pub fn simple_derivative(spec: &SpectralData, i: usize, u: &DVector<f64>) -> Result<f64> {
    let cluster = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
    if !cluster.is_simple() {
        return Err(Error::Degenerate {
            index: i,
            multiplicity: cluster.multiplicity,
        });
    }
    check_len(spec.weights().len(), u.len())?;
    let f = spec.eigenvectors().column(i - 1);
    Ok(weighted_triple(spec.weights(), u, f.as_slice(), f.as_slice()))
}

/// Restriction of multiplication by `u` to an eigenvalue cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDerivativeMatrix {
    pub entries: DMatrix<f64>,
    pub cluster: Cluster,
}

impl ClusterDerivativeMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Ascending eigenvalues (branch slopes) with matching eigenvector columns.
    pub fn branches(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.dim();
        let eig = SymmetricEigen::new(self.entries.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        (vals, vecs)
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.branches().0
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.entries - self.entries.transpose()).amax()
    }
}

/// `M_ab = Σ w u f_a f_b` over the cluster's orthonormal basis.
pub fn cluster_matrix(spec: &SpectralData, cluster: &Cluster, u: &DVector<f64>) -> Result<ClusterDerivativeMatrix> {
    cluster.ensure_complete()?;
    check_len(spec.weights().len(), u.len())?;
    let basis = spec.cluster_basis(cluster);
    let m = cluster.multiplicity;
    let mut entries = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = weighted_triple(spec.weights(), u, basis.column(a).as_slice(), basis.column(b).as_slice());
            entries[(a, b)] = v;
            entries[(b, a)] = v;
        }
    }
    Ok(ClusterDerivativeMatrix {
        entries,
        cluster: *cluster,
    })
}

/// Left and right derivatives of `t ↦ λ_i(q + t u)` at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDerivative {
    pub left: f64,
    pub right: f64,
    /// Interior-of-cluster indices use the sorted-branch rule and are reported
    /// as such.
    pub position: ClusterPosition,
}

/// Tolerance scale for the opposite-sign test.
pub const CRITICAL_PRODUCT_TOL: f64 = 1e-12;

impl DirectionalDerivative {
    /// `left · right ≤ 1e−12 · max(|left|, |right|, 1)²`.
    pub fn is_critical(&self) -> bool {
        let scale = self.left.abs().max(self.right.abs()).max(1.0);
        self.left * self.right <= CRITICAL_PRODUCT_TOL * scale * scale
    }

    /// Strict decrease on at least one side of `t = 0`.
    pub fn has_descent(&self, threshold: f64) -> bool {
        self.right < -threshold || self.left > threshold
    }

    /// Strict increase on at least one side of `t = 0`.
    pub fn has_ascent(&self, threshold: f64) -> bool {
        self.right > threshold || self.left < -threshold
    }
}

/// Sorted-branch selection on a known cluster.
pub fn one_sided_in_cluster(
    spec: &SpectralData,
    cluster: &Cluster,
    i: usize,
    u: &DVector<f64>,
) -> Result<DirectionalDerivative> {
    if !cluster.contains(i) {
        return Err(Error::Precondition(format!(
            "index {i} is not in cluster {}..={}",
            cluster.first_index,
            cluster.last_index()
        )));
    }
    let slopes = cluster_matrix(spec, cluster, u)?.slopes();
    Ok(select_branches(&slopes, cluster.rank_of(i), cluster.position(i)))
}

pub(crate) fn select_branches(sorted_slopes: &[f64], rank: usize, position: ClusterPosition) -> DirectionalDerivative {
    let m = sorted_slopes.len();
    DirectionalDerivative {
        right: sorted_slopes[rank],
        left: sorted_slopes[m - 1 - rank],
        position,
    }
}

pub fn one_sided_derivatives(spec: &SpectralData, i: usize, u: &DVector<f64>) -> Result<DirectionalDerivative> {
    let cluster = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
    one_sided_in_cluster(spec, &cluster, i, u)
}

pub fn is_critical_probe(spec: &SpectralData, i: usize, u: &DVector<f64>) -> Result<bool> {
    Ok(one_sided_derivatives(spec, i, u)?.is_critical())
}

/// One-sided derivatives of `λ_j − λ_i`; each eigenvalue follows its own
/// branch rule and the results are differenced side by side.
pub fn gap_one_sided_derivatives(
    spec: &SpectralData,
    i: usize,
    j: usize,
    u: &DVector<f64>,
) -> Result<DirectionalDerivative> {
    let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
    let cj = detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?;
    gap_one_sided_in_clusters(spec, (&ci, i), (&cj, j), u)
}

pub fn gap_one_sided_in_clusters(
    spec: &SpectralData,
    (ci, i): (&Cluster, usize),
    (cj, j): (&Cluster, usize),
    u: &DVector<f64>,
) -> Result<DirectionalDerivative> {
    if ci.first_index == cj.first_index {
        return Err(Error::DegenerateGap {
            i,
            j,
            gap: spec.eigenvalue(j) - spec.eigenvalue(i),
        });
    }
    let di = one_sided_in_cluster(spec, ci, i, u)?;
    let dj = one_sided_in_cluster(spec, cj, j, u)?;
    let position = if di.position.is_extremal() && dj.position.is_extremal() {
        ClusterPosition::Simple
    } else {
        ClusterPosition::Interior
    };
    Ok(DirectionalDerivative {
        left: dj.left - di.left,
        right: dj.right - di.right,
        position,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeStyle {
    /// Random combinations of low-order trigonometric modes.
    Fourier,
    /// Localized Gaussian bumps.
    Spike,
    /// Independent uniform values per node.
    Noise,
}

impl std::str::FromStr for ProbeStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(ProbeStyle::Fourier),
            "spike" => Ok(ProbeStyle::Spike),
            "noise" => Ok(ProbeStyle::Noise),
            other => Err(Error::Config(format!("unknown probe style `{other}`"))),
        }
    }
}

const MAX_MODE: i32 = 6;

/// Deterministic pseudo-random mean-zero directions with unit sup norm.
pub fn sample_probes(grid: &DomainGrid, count: usize, seed: u64, style: ProbeStyle) -> Result<Vec<ProbeDirection>> {
    if count == 0 {
        return Err(Error::Config("probe count must be at least 1".into()));
    }
    let salt = match style {
        ProbeStyle::Fourier => 0x9e37_79b9_7f4a_7c15,
        ProbeStyle::Spike => 0xbf58_476d_1ce4_e5b9,
        ProbeStyle::Noise => 0x94d0_49bb_1331_11eb,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let raw = match style {
            ProbeStyle::Fourier => fourier_sample(grid, &mut rng),
            ProbeStyle::Spike => spike_sample(grid, &mut rng),
            ProbeStyle::Noise => DVector::from_fn(grid.n_nodes(), |_, _| rng.random_range(-1.0..1.0)),
        };
        let p = ProbeDirection::normalized(grid, &raw)?;
        if p.sup_norm() > 0.0 {
            out.push(p);
        }
    }
    Ok(out)
}

/// A mixed suite cycling through all three styles.
pub fn probe_suite(grid: &DomainGrid, count: usize, seed: u64) -> Result<Vec<ProbeDirection>> {
    let styles = [ProbeStyle::Fourier, ProbeStyle::Spike, ProbeStyle::Noise];
    let mut out = Vec::with_capacity(count);
    for (k, style) in styles.iter().enumerate() {
        let share = count / 3 + usize::from(k < count % 3);
        if share > 0 {
            out.extend(sample_probes(grid, share, seed.wrapping_add(k as u64), *style)?);
        }
    }
    Ok(out)
}

fn fourier_sample(grid: &DomainGrid, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let pi = std::f64::consts::PI;
    let modes = rng.random_range(1..=MAX_MODE);
    match grid.kind() {
        DomainKind::Circle { circumference } => {
            let coeffs: Vec<(f64, f64)> = (0..modes).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            grid.sample(|x, _| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let arg = tau * (k + 1) as f64 * x / circumference;
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum()
            })
        }
        DomainKind::Interval { length } => {
            let coeffs: Vec<(f64, f64)> = (0..modes).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            grid.sample(|x, _| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let arg = pi * (k + 1) as f64 * x / length;
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum()
            })
        }
        DomainKind::Torus2D { lx, ly } => {
            let terms: Vec<(i32, i32, f64, f64)> = (0..modes)
                .map(|_| {
                    let kx = rng.random_range(-3..=3);
                    let ky = rng.random_range(-3..=3);
                    (kx, ky, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .collect();
            grid.sample(|x, y| {
                terms
                    .iter()
                    .map(|&(kx, ky, a, b)| {
                        let arg = tau * (kx as f64 * x / lx + ky as f64 * y / ly);
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum()
            })
        }
    }
}

fn spike_sample(grid: &DomainGrid, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let (lx, ly) = match grid.kind() {
        DomainKind::Circle { circumference } => (circumference, 0.0),
        DomainKind::Interval { length } => (length, 0.0),
        DomainKind::Torus2D { lx, ly } => (lx, ly),
    };
    let periodic = grid.bc() == BoundaryCondition::Closed;
    let cx = rng.random_range(0.0..lx);
    let cy = if ly > 0.0 { rng.random_range(0.0..ly) } else { 0.0 };
    let width = rng.random_range(0.02..0.15) * lx;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let dist = move |a: f64, c: f64, l: f64| {
        let d = (a - c).abs();
        if periodic {
            d.min(l - d)
        } else {
            d
        }
    };
    grid.sample(|x, y| {
        let dx = dist(x, cx, lx);
        let dy = if ly > 0.0 { dist(y, cy, ly) } else { 0.0 };
        sign * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
    })
}
