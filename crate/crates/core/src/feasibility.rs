//! PSD feasibility by Dykstra's alternating projections.
//!
//! Unknowns are a product of symmetric blocks `G_1, …, G_p`, stored in
//! scaled half-vectorized form (`svec`: diagonal entries, then `√2 G_ab`
//! for `a < b`), so that the Euclidean inner product of two `svec` vectors is
//! the Frobenius inner product of the matrices. The problem is
//!
//! ```text
//! find s ∈ K = PSD(m_1) × … × PSD(m_p)   with   B s = b
//! ```
//!
//! When `b ∉ range(B)` the affine set is replaced by the least-squares
//! solutions of `B s = b`, which is never empty. If the two sets do not meet,
//! the iterates stall and the difference between the cone and affine iterates
//! converges to the gap vector `g ∈ K`, normal to the affine set. Together
//! with the least-squares residual `r⊥ = b − B s_ls` it yields the dual vector
//!
//! ```text
//! y = −r⊥ + y_g,    Bᵀ y_g = g,    so   Bᵀ y ∈ K   and   ⟨y, b⟩ = −‖r⊥‖² − ‖g‖² < 0,
//! ```
//!
//! which is the Farkas-type witness of infeasibility.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const DEFAULT_MAX_ITER: usize = 50_000;

/// Length of `svec` for an `m × m` symmetric matrix.
pub fn svec_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Pairs `(a, b)` with `a ≤ b` in `svec` order: diagonal first, then upper triangle row-wise.
pub fn svec_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..m).map(|a| (a, a)).collect();
    for a in 0..m {
        for b in a + 1..m {
            pairs.push((a, b));
        }
    }
    pairs
}

pub fn svec(g: &DMatrix<f64>) -> DVector<f64> {
    let m = g.nrows();
    let s2 = std::f64::consts::SQRT_2;
    DVector::from_iterator(
        svec_len(m),
        svec_pairs(m)
            .into_iter()
            .map(|(a, b)| if a == b { g[(a, a)] } else { s2 * 0.5 * (g[(a, b)] + g[(b, a)]) }),
    )
}

pub fn unsvec(s: &[f64], m: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, m);
    let inv = 1.0 / std::f64::consts::SQRT_2;
    for (k, (a, b)) in svec_pairs(m).into_iter().enumerate() {
        if a == b {
            g[(a, a)] = s[k];
        } else {
            g[(a, b)] = s[k] * inv;
            g[(b, a)] = s[k] * inv;
        }
    }
    g
}

/// Nearest PSD matrix in Frobenius norm (eigenvalue clipping).
pub fn project_psd(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(0.5 * (g + g.transpose()));
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(0.5 * (g + g.transpose())).eigenvalues.min()
}

/// One instance of the block PSD feasibility problem.
#[derive(Debug, Clone)]
pub struct ConeProblem {
    pub blocks: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Stop once `sup |B s − b|` on the cone iterate falls below this.
    pub residual_tol: f64,
    /// Relative singular-value cutoff for the least-squares solve.
    pub rank_tol: f64,
    /// Iterations between stall checks on the gap vector.
    pub stall_window: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: DEFAULT_MAX_ITER,
            residual_tol: 1e-11,
            rank_tol: 1e-12,
            stall_window: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Cone iterate satisfies the affine constraints to `residual_tol`.
    Reached,
    /// Cone and affine iterates coincide but the affine set is a least-squares
    /// substitute, so `b` itself is out of reach.
    Inconsistent,
    /// Gap vector stopped changing while bounded away from zero.
    Stalled,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ConeOutcome {
    /// Last cone-side iterate (exactly PSD blockwise).
    pub cone_point: DVector<f64>,
    /// `b − B s` evaluated at `cone_point`.
    pub residual: DVector<f64>,
    /// Least-squares residual `b − B s_ls`; zero when `b ∈ range(B)`.
    pub ls_residual: DVector<f64>,
    /// Cone iterate minus affine iterate at termination.
    pub gap: DVector<f64>,
    /// Candidate dual vector `y` (see module docs).
    pub dual: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Singular triplets above `rank_tol·σ_max`, largest first.
///
/// nalgebra's bidiagonal SVD loses up to 1e-5 of accuracy on exactly
/// rank-deficient product matrices, so the factors are read off the
/// symmetric eigendecomposition of `[[0, Rᵀ], [R, 0]]` after a thin QR.
fn thin_svd(b: &DMatrix<f64>, rank_tol: f64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (n, d) = b.shape();
    let (q, r) = if n >= d {
        let qr = b.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, b.clone())
    };
    let p = r.nrows();
    let mut jw = DMatrix::zeros(p + d, p + d);
    jw.view_mut((0, p), (p, d)).copy_from(&r);
    jw.view_mut((p, 0), (d, p)).copy_from(&r.transpose());
    let eig = SymmetricEigen::new(jw);
    let smax = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let mut keep: Vec<usize> = (0..p + d).filter(|&k| eig.eigenvalues[k] > rank_tol * smax).collect();
    keep.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let s2 = std::f64::consts::SQRT_2;
    let u = DMatrix::from_fn(p, keep.len(), |i, k| s2 * eig.eigenvectors[(i, keep[k])]);
    let v = DMatrix::from_fn(d, keep.len(), |i, k| s2 * eig.eigenvectors[(p + i, keep[k])]);
    let sig = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
    let u = match q {
        Some(q) => q * u,
        None => u,
    };
    (u, sig, v)
}

impl ConeProblem {
    fn split_blocks<'a>(&self, s: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for &m in &self.blocks {
            let len = svec_len(m);
            out.push(&s[off..off + len]);
            off += len;
        }
        out
    }

    pub fn project_cone(&self, s: &DVector<f64>) -> DVector<f64> {
        let mut out = Vec::with_capacity(s.len());
        for (block, &m) in self.split_blocks(s.as_slice()).into_iter().zip(&self.blocks) {
            let g = project_psd(&unsvec(block, m));
            out.extend(svec(&g).iter().copied());
        }
        DVector::from_vec(out)
    }

    /// Unpack an `svec` product vector into its blocks.
    pub fn unpack(&self, s: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.split_blocks(s.as_slice())
            .into_iter()
            .zip(&self.blocks)
            .map(|(b, &m)| unsvec(b, m))
            .collect()
    }

    pub fn solve(&self, settings: &SolverSettings) -> ConeOutcome {
        let d: usize = self.blocks.iter().map(|&m| svec_len(m)).sum();
        assert_eq!(self.matrix.ncols(), d, "matrix columns must match svec length");
        assert_eq!(self.matrix.nrows(), self.rhs.len());

        let (u_r, sig, v_r) = thin_svd(&self.matrix, settings.rank_tol);

        // Least-squares (min-norm) solution and its residual.
        let mut coef = u_r.transpose() * &self.rhs;
        for (c, s) in coef.iter_mut().zip(&sig) {
            *c /= s;
        }
        let s_ls = &v_r * &coef;
        let ls_residual = &self.rhs - &self.matrix * &s_ls;
        let inconsistent = ls_residual.norm() > 1e-10 * self.rhs.norm().max(1.0);

        let project_affine = |s: &DVector<f64>| -> DVector<f64> {
            let diff = s - &s_ls;
            s - &v_r * (v_r.transpose() * diff)
        };

        let mut x = s_ls.clone();
        let mut p_inc = DVector::zeros(d);
        let mut q_inc = DVector::zeros(d);
        let mut cone_point = self.project_cone(&x);
        let mut gap = &cone_point - &x;
        let mut gap_prev = gap.clone();
        let mut termination = Termination::MaxIter;
        let mut iterations = 0;

        for it in 1..=settings.max_iter {
            iterations = it;
            let y = self.project_cone(&(&x + &p_inc));
            p_inc = &x + &p_inc - &y;
            let x_new = project_affine(&(&y + &q_inc));
            q_inc = &y + &q_inc - &x_new;
            gap = &y - &x_new;
            cone_point = y;
            x = x_new;

            let res = (&self.rhs - &self.matrix * &cone_point).amax();
            if !inconsistent && res <= settings.residual_tol {
                termination = Termination::Reached;
                break;
            }
            let gnorm = gap.norm();
            if inconsistent && gnorm <= 1e-14 * (1.0 + cone_point.norm()) {
                termination = Termination::Inconsistent;
                break;
            }
            if it % settings.stall_window == 0 {
                let drift = (&gap - &gap_prev).norm();
                if gnorm > 0.0 && drift <= 1e-12 * gnorm && gnorm > 1e-12 {
                    termination = Termination::Stalled;
                    break;
                }
                gap_prev = gap.clone();
            }
        }

        // Dual vector: y_g solves Bᵀ y_g = P_range(Bᵀ) g with minimum norm.
        let mut gcoef = v_r.transpose() * &gap;
        for (c, s) in gcoef.iter_mut().zip(&sig) {
            *c /= s;
        }
        let dual = -&ls_residual + &u_r * gcoef;
        let residual = &self.rhs - &self.matrix * &cone_point;
        ConeOutcome {
            cone_point,
            residual,
            ls_residual,
            gap,
            dual,
            iterations,
            termination,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_frobenius() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, -1.0, 3.0, 0.25, 0.5, 0.25, 1.0]);
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.0, 0.7, -0.2, 0.7, -1.0]);
        let lhs = svec(&g).dot(&svec(&h));
        let rhs = g.component_mul(&h).sum();
        assert!((lhs - rhs).abs() < 1e-14);
        assert!((unsvec(svec(&g).as_slice(), 3) - &g).amax() < 1e-15);
    }

    #[test]
    fn psd_projection_clips_negative_part() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        let p = project_psd(&g);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15 && p[(1, 1)].abs() < 1e-15);
    }

    #[test]
    fn finds_feasible_point() {
        // 2×2 block with G00 + G11 = 2 and G01 = 0.5 (svec entry √2·0.5).
        let s2 = std::f64::consts::SQRT_2;
        let p = ConeProblem {
            blocks: vec![2],
            matrix: DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            rhs: DVector::from_vec(vec![2.0, s2 * 0.5]),
        };
        let out = p.solve(&SolverSettings::default());
        assert_eq!(out.termination, Termination::Reached);
        let g = &p.unpack(&out.cone_point)[0];
        assert!(min_eigenvalue(g) >= -1e-12);
        assert!(out.residual.amax() < 1e-10);
    }

    #[test]
    fn infeasible_yields_dual_witness() {
        // 1×1 block with G = −1: empty intersection with the PSD cone.
        let p = ConeProblem {
            blocks: vec![1],
            matrix: DMatrix::from_element(1, 1, 1.0),
            rhs: DVector::from_element(1, -1.0),
        };
        let out = p.solve(&SolverSettings::default());
        assert_ne!(out.termination, Termination::Reached);
        // Bᵀ y ≥ 0 and ⟨y, b⟩ < 0.
        let bty = p.matrix.transpose() * &out.dual;
        assert!(bty[0] >= -1e-12);
        assert!(out.dual.dot(&p.rhs) < 0.0);
    }

    #[test]
    fn inconsistent_system_yields_orthogonal_residual() {
        // Two equations G = 1 and G = 3: least squares G = 2, residual (−1, 1).
        let p = ConeProblem {
            blocks: vec![1],
            matrix: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            rhs: DVector::from_vec(vec![1.0, 3.0]),
        };
        let out = p.solve(&SolverSettings::default());
        assert!((out.ls_residual - DVector::from_vec(vec![-1.0, 1.0])).amax() < 1e-12);
        assert!(out.dual.dot(&p.rhs) < 0.0);
    }
}
