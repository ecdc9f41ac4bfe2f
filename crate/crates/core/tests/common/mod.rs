#![allow(dead_code)]

use std::f64::consts::PI;

use critpot::domain::{build_grid, BoundaryCondition, DomainGrid, DomainKind};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    Circle,
    Dirichlet,
    Neumann,
}

pub fn grid(model: Model, n: usize) -> DomainGrid {
    let (kind, bc) = match model {
        Model::Circle => (DomainKind::Circle { circumference: 2.0 * PI }, BoundaryCondition::Closed),
        Model::Dirichlet => (DomainKind::Interval { length: PI }, BoundaryCondition::Dirichlet),
        Model::Neumann => (DomainKind::Interval { length: PI }, BoundaryCondition::Neumann),
    };
    build_grid(kind, n, bc).unwrap()
}

/// Node positions as the textbook stencils place them.
pub fn nodes(model: Model, n: usize) -> Vec<f64> {
    match model {
        Model::Circle => (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect(),
        Model::Dirichlet => (1..n).map(|k| PI * k as f64 / n as f64).collect(),
        Model::Neumann => (0..n).map(|k| PI * (k as f64 + 0.5) / n as f64).collect(),
    }
}

/// Second-difference matrix plus diag(q), assembled from scratch.
pub fn operator(model: Model, n: usize, q: &[f64]) -> DMatrix<f64> {
    let (m, h) = match model {
        Model::Circle => (n, 2.0 * PI / n as f64),
        Model::Dirichlet => (n - 1, PI / n as f64),
        Model::Neumann => (n, PI / n as f64),
    };
    assert_eq!(q.len(), m);
    let s = 1.0 / (h * h);
    let mut a = DMatrix::zeros(m, m);
    for k in 0..m {
        a[(k, k)] = 2.0 * s + q[k];
        if k + 1 < m {
            a[(k, k + 1)] = -s;
            a[(k + 1, k)] = -s;
        }
    }
    match model {
        Model::Circle => {
            a[(0, m - 1)] = -s;
            a[(m - 1, 0)] = -s;
        }
        Model::Neumann => {
            a[(0, 0)] -= s;
            a[(m - 1, m - 1)] -= s;
        }
        Model::Dirichlet => {}
    }
    a
}

pub fn dense_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Ascending eigenpairs; vectors are Euclidean-orthonormal columns.
pub fn dense_eigenpairs(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Rayleigh quotient with the stencil written as a sum of squared edge
/// differences, which keeps relative accuracy near eps·λ instead of eps·‖H‖.
pub fn rayleigh(model: Model, n: usize, q: &[f64], v: &[f64]) -> f64 {
    let h = match model {
        Model::Circle => 2.0 * PI / n as f64,
        Model::Dirichlet | Model::Neumann => PI / n as f64,
    };
    let m = v.len();
    let mut edges: f64 = (0..m - 1).map(|k| (v[k + 1] - v[k]).powi(2)).sum();
    match model {
        Model::Circle => edges += (v[0] - v[m - 1]).powi(2),
        Model::Dirichlet => edges += v[0] * v[0] + v[m - 1] * v[m - 1],
        Model::Neumann => {}
    }
    let pot: f64 = v.iter().zip(q).map(|(x, p)| p * x * x).sum();
    let norm: f64 = v.iter().map(|x| x * x).sum();
    (edges / (h * h) + pot) / norm
}

/// `λ_i` of the hand-assembled operator, refined by [`rayleigh`].
pub fn oracle_eigenvalue(model: Model, n: usize, q: &[f64], i: usize) -> f64 {
    let (_, vecs) = dense_eigenpairs(&operator(model, n, q));
    rayleigh(model, n, q, vecs.column(i - 1).as_slice())
}

/// Smooth random potential: a few Fourier modes with decaying amplitudes.
pub fn random_potential(grid: &DomainGrid, seed: u64, amp: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = match grid.kind() {
        DomainKind::Circle { circumference } => circumference,
        DomainKind::Interval { length } => 2.0 * length,
        DomainKind::Torus2D { lx, .. } => lx,
    };
    let modes: Vec<(f64, f64, f64)> = (1..=4)
        .map(|k| (k as f64, rng.random_range(-1.0..1.0) / k as f64, rng.random_range(-1.0..1.0) / k as f64))
        .collect();
    let offset = rng.random_range(-0.5..0.5);
    grid.sample(|x, _| {
        let th = 2.0 * PI * x / period;
        offset + amp * modes.iter().map(|(k, a, b)| a * (k * th).cos() + b * (k * th).sin()).sum::<f64>()
    })
}

pub fn weighted_mean(grid: &DomainGrid, u: &DVector<f64>) -> f64 {
    grid.weights().dot(u) / grid.weights().sum()
}

pub fn mean_zero(grid: &DomainGrid, u: &DVector<f64>) -> DVector<f64> {
    u.add_scalar(-weighted_mean(grid, u))
}
