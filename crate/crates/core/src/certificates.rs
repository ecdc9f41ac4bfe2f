//! Criticality certificates.
//!
//! A potential is critical for `λ_i` (first or last of its cluster) exactly
//! when the constant function `1` lies in the cone generated by the squares
//! of eigenfunctions in the cluster. Over an orthonormal basis `f_1..f_m`
//! that cone is `{ Σ_ab G_ab f_a f_b : G ⪰ 0 }`, so the question becomes a
//! finite PSD feasibility problem with one linear equation per node.
//!
//! Either a Gram matrix `G` is found (and with it a family of eigenfunctions
//! whose squares sum to one), or a mean-zero direction `u` is produced for
//! which the restricted form `f ↦ Σ w u f²` is definite on the cluster. The
//! latter is only reported after the definiteness is checked directly.
//!
//! The gap version asks for `G_i, G_j ⪰ 0` with `Σ G_i f f = Σ G_j g g`
//! pointwise and `tr G_i = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainGrid, Potential};
use crate::error::{check_len, Error, Result};
use crate::feasibility::{min_eigenvalue, svec_len, svec_pairs, ConeProblem, SolverSettings};
use crate::perturbation::{cluster_matrix, probe_suite, ProbeDirection};
use crate::spectral::{detect_cluster, recover_potential, Cluster, ClusterPosition, SpectralData, DEFAULT_CLUSTER_TOL};

/// Sup-norm tolerance on `Σ G_ab f_a f_b − 1`.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Smallest admissible eigenvalue of a reported Gram matrix.
pub const PSD_TOL: f64 = -1e-10;
/// Required definiteness margin of a separating direction (unit sup norm).
pub const SEPARATION_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateStatus {
    Feasible,
    Infeasible,
    Undecided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramCertificate {
    pub status: CertificateStatus,
    pub gram: Option<DMatrix<f64>>,
    /// `sup_x |Σ G_ab f_a(x) f_b(x) − 1|` at the final Gram iterate.
    pub residual: f64,
    pub separating_direction: Option<ProbeDirection>,
    /// Smallest `|eigenvalue|` of the restricted form along the separating direction.
    pub margin: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapCertificate {
    pub status: CertificateStatus,
    pub gram_i: Option<DMatrix<f64>>,
    pub gram_j: Option<DMatrix<f64>>,
    /// `sup_x |Σ G_i f f − Σ G_j g g|`.
    pub residual: f64,
    /// `Σ w Σ (G_i)_ab f_a f_b`, equal to `tr G_i`.
    pub normalization: f64,
    pub separating_direction: Option<ProbeDirection>,
    pub margin: Option<f64>,
    pub iterations: usize,
    /// Both indices sit in one cluster, so the gap vanishes and no solve is needed.
    pub by_degeneracy: bool,
}

/// Node-wise products `f_a f_b` in `svec` column order.
fn product_columns(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = basis.shape();
    let pairs = svec_pairs(m);
    let s2 = std::f64::consts::SQRT_2;
    DMatrix::from_fn(n, pairs.len(), |x, k| {
        let (a, b) = pairs[k];
        let v = basis[(x, a)] * basis[(x, b)];
        if a == b {
            v
        } else {
            s2 * v
        }
    })
}

/// `Σ_ab G_ab f_a(x) f_b(x)` at every node.
pub fn gram_function(gram: &DMatrix<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    let bg = basis * gram;
    DVector::from_fn(basis.nrows(), |x, _| bg.row(x).dot(&basis.row(x)))
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// Search for `G ⪰ 0` with `Σ G_ab f_a f_b = 1` on the cluster.
pub fn criticality_certificate(spec: &SpectralData, cluster: &Cluster) -> Result<GramCertificate> {
    cluster.ensure_complete()?;
    let basis = spec.cluster_basis(cluster);
    let m = cluster.multiplicity;
    let sqrt_w = spec.weights().map(f64::sqrt);
    let cols = product_columns(&basis);
    let matrix = DMatrix::from_fn(cols.nrows(), cols.ncols(), |x, k| sqrt_w[x] * cols[(x, k)]);
    let problem = ConeProblem {
        blocks: vec![m],
        matrix,
        rhs: sqrt_w.clone(),
    };
    let out = problem.solve(&settings());
    let gram = problem.unpack(&out.cone_point).remove(0);
    let residual = gram_function(&gram, &basis).add_scalar(-1.0).amax();

    if residual <= FEASIBILITY_TOL && min_eigenvalue(&gram) >= PSD_TOL {
        return Ok(GramCertificate {
            status: CertificateStatus::Feasible,
            gram: Some(gram),
            residual,
            separating_direction: None,
            margin: None,
            iterations: out.iterations,
        });
    }

    // Dual vector lives in √w-scaled node space; u = y / √w satisfies
    // M(u) ⪰ 0 and Σ w u < 0, so −u plays the role of the affine residual.
    let residual_fn = DVector::from_fn(out.dual.len(), |x, _| -out.dual[x] / sqrt_w[x]);
    match separating_direction(spec, cluster, &residual_fn) {
        Ok((u, margin)) => Ok(GramCertificate {
            status: CertificateStatus::Infeasible,
            gram: None,
            residual,
            separating_direction: Some(u),
            margin: Some(margin),
            iterations: out.iterations,
        }),
        Err(Error::SeparationFailed { .. }) => Ok(GramCertificate {
            status: CertificateStatus::Undecided,
            gram: Some(gram),
            residual,
            separating_direction: None,
            margin: None,
            iterations: out.iterations,
        }),
        Err(e) => Err(e),
    }
}

/// Build `u = −r`, remove its mean, rescale to unit sup norm and check that
/// the restricted form is strictly definite on the cluster.
///
/// Returns the direction and the verified margin.
pub fn separating_direction(
    spec: &SpectralData,
    cluster: &Cluster,
    residual: &DVector<f64>,
) -> Result<(ProbeDirection, f64)> {
    check_len(spec.weights().len(), residual.len())?;
    let u = -residual;
    let mean = spec.weights().dot(&u) / spec.volume();
    let mut u0 = u.add_scalar(-mean);
    let mean2 = spec.weights().dot(&u0) / spec.volume();
    u0.add_scalar_mut(-mean2);
    let sup = u0.amax();
    if !(sup > 0.0) {
        return Err(Error::SeparationFailed { min: 0.0, max: 0.0 });
    }
    u0 /= sup;
    let slopes = cluster_matrix(spec, cluster, &u0)?.slopes();
    let (lo, hi) = (slopes[0], slopes[slopes.len() - 1]);
    let margin = if lo >= SEPARATION_MARGIN {
        lo
    } else if hi <= -SEPARATION_MARGIN {
        -hi
    } else {
        return Err(Error::SeparationFailed { min: lo, max: hi });
    };
    let sup_norm = u0.amax();
    Ok((ProbeDirection::from_parts(u0, sup_norm), margin))
}

/// Eigenfunction family `f̃_p = √γ_p Σ_a (v_p)_a f_a` from `G = Σ γ_p v_p v_pᵀ`.
pub fn frame_from_gram(gram: &DMatrix<f64>, basis: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(0.5 * (gram + gram.transpose()));
    let mut order: Vec<usize> = (0..gram.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .filter(|&p| eig.eigenvalues[p] > 1e-12)
        .map(|p| basis * eig.eigenvectors.column(p) * eig.eigenvalues[p].sqrt())
        .collect()
}

/// Eigenfunctions whose squares sum to one, from a feasible certificate.
pub fn extract_frame(cert: &GramCertificate, spec: &SpectralData, cluster: &Cluster) -> Result<Vec<DVector<f64>>> {
    let gram = match (&cert.status, &cert.gram) {
        (CertificateStatus::Feasible, Some(g)) => g,
        _ => return Err(Error::Precondition("frame extraction needs a feasible certificate".into())),
    };
    let basis = spec.cluster_basis(cluster);
    let frame = frame_from_gram(gram, &basis);
    let mut sum = DVector::zeros(basis.nrows());
    for f in &frame {
        sum += f.component_mul(f);
    }
    let dev = sum.add_scalar(-1.0).amax();
    if dev > cert.residual + 1e-10 {
        return Err(Error::Numerical {
            message: "extracted frame does not reproduce the Gram identity".into(),
            residual: dev,
        });
    }
    Ok(frame)
}

/// Search for `G_i, G_j ⪰ 0`, `tr G_i = 1`, with equal cone elements.
pub fn gap_certificate(spec: &SpectralData, ci: &Cluster, cj: &Cluster) -> Result<GapCertificate> {
    if ci.first_index == cj.first_index {
        return Ok(GapCertificate {
            status: CertificateStatus::Feasible,
            gram_i: None,
            gram_j: None,
            residual: 0.0,
            normalization: 0.0,
            separating_direction: None,
            margin: None,
            iterations: 0,
            by_degeneracy: true,
        });
    }
    ci.ensure_complete()?;
    cj.ensure_complete()?;
    let bi = spec.cluster_basis(ci);
    let bj = spec.cluster_basis(cj);
    let (m, l) = (ci.multiplicity, cj.multiplicity);
    let (di, dj) = (svec_len(m), svec_len(l));
    let n = bi.nrows();
    let sqrt_w = spec.weights().map(f64::sqrt);
    let ci_cols = product_columns(&bi);
    let cj_cols = product_columns(&bj);

    let mut matrix = DMatrix::zeros(n + 1, di + dj);
    for x in 0..n {
        for k in 0..di {
            matrix[(x, k)] = sqrt_w[x] * ci_cols[(x, k)];
        }
        for k in 0..dj {
            matrix[(x, di + k)] = -sqrt_w[x] * cj_cols[(x, k)];
        }
    }
    // Trace row: ∫ Σ (G_i)_ab f_a f_b = tr G_i for an orthonormal basis.
    for k in 0..m {
        matrix[(n, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let problem = ConeProblem {
        blocks: vec![m, l],
        matrix,
        rhs,
    };
    let out = problem.solve(&settings());
    let mut blocks = problem.unpack(&out.cone_point);
    let gram_j = blocks.pop().expect("two blocks");
    let gram_i = blocks.pop().expect("two blocks");
    let diff = gram_function(&gram_i, &bi) - gram_function(&gram_j, &bj);
    let residual = diff.amax();
    let normalization = gram_i.trace();

    if residual <= FEASIBILITY_TOL
        && (normalization - 1.0).abs() <= 1e-8
        && min_eigenvalue(&gram_i) >= PSD_TOL
        && min_eigenvalue(&gram_j) >= PSD_TOL
    {
        return Ok(GapCertificate {
            status: CertificateStatus::Feasible,
            gram_i: Some(gram_i),
            gram_j: Some(gram_j),
            residual,
            normalization,
            separating_direction: None,
            margin: None,
            iterations: out.iterations,
            by_degeneracy: false,
        });
    }

    let u = DVector::from_fn(n, |x, _| out.dual[x] / sqrt_w[x]);
    let (status, direction, margin) = match gap_separation(spec, ci, cj, &u) {
        Ok((d, margin)) => (CertificateStatus::Infeasible, Some(d), Some(margin)),
        Err(Error::SeparationFailed { .. }) => (CertificateStatus::Undecided, None, None),
        Err(e) => return Err(e),
    };
    Ok(GapCertificate {
        status,
        gram_i: Some(gram_i),
        gram_j: Some(gram_j),
        residual,
        normalization,
        separating_direction: direction,
        margin,
        iterations: out.iterations,
        by_degeneracy: false,
    })
}

/// Verify that every slope difference `ν_l − μ_k` has one strict sign along `u`.
pub fn gap_separation(
    spec: &SpectralData,
    ci: &Cluster,
    cj: &Cluster,
    u: &DVector<f64>,
) -> Result<(ProbeDirection, f64)> {
    check_len(spec.weights().len(), u.len())?;
    let mean = spec.weights().dot(u) / spec.volume();
    let mut u0 = u.add_scalar(-mean);
    let mean2 = spec.weights().dot(&u0) / spec.volume();
    u0.add_scalar_mut(-mean2);
    let sup = u0.amax();
    if !(sup > 0.0) {
        return Err(Error::SeparationFailed { min: 0.0, max: 0.0 });
    }
    u0 /= sup;
    let mu = cluster_matrix(spec, ci, &u0)?.slopes();
    let nu = cluster_matrix(spec, cj, &u0)?.slopes();
    let lo = nu[0] - mu[mu.len() - 1];
    let hi = nu[nu.len() - 1] - mu[0];
    let margin = if lo >= SEPARATION_MARGIN {
        lo
    } else if hi <= -SEPARATION_MARGIN {
        -hi
    } else {
        return Err(Error::SeparationFailed { min: lo, max: hi });
    };
    let sup_norm = u0.amax();
    Ok((ProbeDirection::from_parts(u0, sup_norm), margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Critical,
    NotCritical,
    /// Cone condition holds but the index is interior to its cluster, where
    /// it is only a necessary condition.
    NecessaryConditionOnly,
    Undecided,
}

/// Aggregated evidence about criticality of `q` for `λ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub index: usize,
    pub eigenvalue: f64,
    pub cluster_first: usize,
    pub multiplicity: usize,
    pub position: ClusterPosition,
    /// The cone condition is sufficient here (first or last of cluster).
    pub sufficiency_applies: bool,
    pub status: CertificateStatus,
    pub residual: f64,
    pub separation_margin: Option<f64>,
    pub gram: Option<Vec<Vec<f64>>>,
    pub probes_tested: usize,
    pub probes_critical: usize,
    /// `sup |q_recovered − q|` when a frame was extracted.
    pub recovered_deviation: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub separating_direction: Option<Vec<f64>>,
    #[serde(skip)]
    pub frame: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub recovered_potential: Option<Vec<f64>>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Certificate, probe suite and (when feasible) potential recovery for `λ_i`.
pub fn full_criticality_report(
    grid: &DomainGrid,
    q: &Potential,
    spec: &SpectralData,
    i: usize,
    probe_count: usize,
    seed: u64,
) -> Result<CriticalityReport> {
    let cluster = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
    cluster.ensure_complete()?;
    let position = cluster.position(i);
    let cert = criticality_certificate(spec, &cluster)?;

    let probes = if probe_count > 0 {
        probe_suite(grid, probe_count, seed)?
    } else {
        Vec::new()
    };
    let mut probes_critical = 0;
    for u in &probes {
        let d = crate::perturbation::one_sided_in_cluster(spec, &cluster, i, u)?;
        if d.is_critical() {
            probes_critical += 1;
        }
    }

    let (mut frame, mut recovered, mut recovered_deviation) = (None, None, None);
    if cert.status == CertificateStatus::Feasible {
        let f = extract_frame(&cert, spec, &cluster)?;
        let rq = recover_potential(&f, spec.eigenvalue(i), grid)?;
        recovered_deviation = Some((rq.values() - q.values()).amax());
        recovered = Some(rq.values().iter().copied().collect());
        frame = Some(f.iter().map(|v| v.iter().copied().collect()).collect());
    }

    let verdict = match cert.status {
        CertificateStatus::Infeasible => Verdict::NotCritical,
        CertificateStatus::Undecided => Verdict::Undecided,
        CertificateStatus::Feasible if position.is_extremal() => Verdict::Critical,
        CertificateStatus::Feasible => Verdict::NecessaryConditionOnly,
    };

    Ok(CriticalityReport {
        index: i,
        eigenvalue: spec.eigenvalue(i),
        cluster_first: cluster.first_index,
        multiplicity: cluster.multiplicity,
        position,
        sufficiency_applies: position.is_extremal(),
        status: cert.status,
        residual: cert.residual,
        separation_margin: cert.margin,
        gram: cert.gram.as_ref().filter(|_| cert.status == CertificateStatus::Feasible).map(matrix_rows),
        probes_tested: probes.len(),
        probes_critical,
        recovered_deviation,
        verdict,
        separating_direction: cert.separating_direction.map(|u| u.iter().copied().collect()),
        frame,
        recovered_potential: recovered,
    })
}

/// Serializable view of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub status: CertificateStatus,
    pub grams: Vec<Vec<Vec<f64>>>,
    pub residual: f64,
    pub iterations: usize,
    pub margin: Option<f64>,
    /// File holding the separating direction, when one was produced.
    pub separating_direction_csv: Option<String>,
    pub by_degeneracy: bool,
}

impl GramCertificate {
    pub fn record(&self, direction_csv: Option<String>) -> CertificateRecord {
        CertificateRecord {
            status: self.status,
            grams: self.gram.iter().map(matrix_rows).collect(),
            residual: self.residual,
            iterations: self.iterations,
            margin: self.margin,
            separating_direction_csv: direction_csv.filter(|_| self.separating_direction.is_some()),
            by_degeneracy: false,
        }
    }
}

impl GapCertificate {
    pub fn record(&self, direction_csv: Option<String>) -> CertificateRecord {
        CertificateRecord {
            status: self.status,
            grams: self.gram_i.iter().chain(self.gram_j.iter()).map(matrix_rows).collect(),
            residual: self.residual,
            iterations: self.iterations,
            margin: self.margin,
            separating_direction_csv: direction_csv.filter(|_| self.separating_direction.is_some()),
            by_degeneracy: self.by_degeneracy,
        }
    }
}
