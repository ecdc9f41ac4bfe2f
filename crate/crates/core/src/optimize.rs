//! Projected subgradient optimization of eigenvalues and gaps under a
//! fixed-mean, bounded-sup constraint.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{criticality_certificate, gap_certificate, CertificateStatus};
use crate::domain::{project_mean_zero, DomainGrid, Potential};
use crate::error::{Error, Result};
use crate::perturbation::{cluster_matrix, one_sided_in_cluster, probe_suite, DirectionalDerivative, ProbeDirection};
use crate::spectral::{detect_cluster, solve, Cluster, SpectralData, DEFAULT_CLUSTER_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Eigenvalue(usize),
    /// `λ_j − λ_i` with `i < j`.
    Gap(usize, usize),
}

impl Target {
    pub fn max_index(&self) -> usize {
        match *self {
            Target::Eigenvalue(i) => i,
            Target::Gap(_, j) => j,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Target::Eigenvalue(0) => Err(Error::Config("eigenvalue index starts at 1".into())),
            Target::Gap(i, j) if i == 0 || i >= j => Err(Error::Config(format!("gap needs 1 ≤ i < j, got ({i}, {j})"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub target: Target,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub mean_c: f64,
    pub bound_b: f64,
}

impl ConstraintSpec {
    pub fn new(mean_c: f64, bound_b: f64) -> Result<ConstraintSpec> {
        let c = ConstraintSpec { mean_c, bound_b };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound_b.is_finite() && self.mean_c.is_finite()) || self.bound_b < self.mean_c.abs() {
            return Err(Error::Config(format!(
                "empty constraint set: bound {} below |mean| {}",
                self.bound_b,
                self.mean_c.abs()
            )));
        }
        Ok(())
    }

    pub fn is_satisfied(&self, grid: &DomainGrid, q: &Potential) -> bool {
        let _ = grid;
        (q.mean() - self.mean_c).abs() <= 1e-10 && q.sup_norm() <= self.bound_b + 1e-12
    }
}

/// Objective value `λ_i` or `λ_j − λ_i`.
pub fn objective_value(spec: &SpectralData, target: Target) -> f64 {
    match target {
        Target::Eigenvalue(i) => spec.eigenvalue(i),
        Target::Gap(i, j) => spec.eigenvalue(j) - spec.eigenvalue(i),
    }
}

/// Number of eigenpairs needed so that clusters around the target are complete.
fn spectrum_size(grid: &DomainGrid, target: Target) -> usize {
    (target.max_index() + 6).min(grid.n_nodes())
}

/// Solve with enough modes that the target's clusters are not truncated.
pub fn solve_for(grid: &DomainGrid, q: &Potential, target: Target) -> Result<SpectralData> {
    let mut k = spectrum_size(grid, target);
    loop {
        let spec = solve(grid, q, k)?;
        let c = detect_cluster(&spec, target.max_index(), DEFAULT_CLUSTER_TOL)?;
        if !c.truncated || k == grid.n_nodes() {
            return Ok(spec);
        }
        k = (2 * k).min(grid.n_nodes());
    }
}

/// Exact weighted projection onto `{ mean = c, |q| ≤ B }`: `clip(q − τ, −B, B)`.
pub fn project_feasible(grid: &DomainGrid, q: &DVector<f64>, constraint: &ConstraintSpec) -> Result<Potential> {
    constraint.validate()?;
    crate::error::check_len(grid.n_nodes(), q.len())?;
    let (c, b) = (constraint.mean_c, constraint.bound_b);
    if b - c.abs() <= 0.0 {
        return Ok(Potential::constant(grid, c));
    }
    let w = grid.weights();
    let vol = grid.volume();
    let mean_at = |tau: f64| -> f64 {
        q.iter().zip(w.iter()).map(|(v, wx)| wx * (v - tau).clamp(-b, b)).sum::<f64>() / vol
    };
    let (mut lo, mut hi) = (q.min() - b - 1.0, q.max() + b + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    // Exact shift on the active pattern found by bisection.
    let tau = 0.5 * (lo + hi);
    let (mut free_w, mut free_sum, mut fixed) = (0.0, 0.0, 0.0);
    for (v, wx) in q.iter().zip(w.iter()) {
        let p = v - tau;
        if p >= b {
            fixed += wx * b;
        } else if p <= -b {
            fixed -= wx * b;
        } else {
            free_w += wx;
            free_sum += wx * v;
        }
    }
    let tau = if free_w > 0.0 { (free_sum + fixed - c * vol) / free_w } else { tau };
    let mut p = q.map(|v| (v - tau).clamp(-b, b));
    // Clean up rounding on the free nodes.
    for _ in 0..3 {
        let err = grid.integrate(&p) / vol - c;
        if err.abs() <= 1e-14 * (1.0 + c.abs()) {
            break;
        }
        let free: Vec<usize> = (0..p.len()).filter(|&k| p[k].abs() < b).collect();
        let fw: f64 = free.iter().map(|&k| w[k]).sum();
        if fw <= 0.0 {
            break;
        }
        for &k in &free {
            p[k] = (p[k] - err * vol / fw).clamp(-b, b);
        }
    }
    Potential::new(grid, p)
}

/// `V f₁² − 1`: increases the ground state whenever `f₁` is not constant.
pub fn ground_state_ascent_direction(grid: &DomainGrid, spec: &SpectralData) -> Result<ProbeDirection> {
    let f = spec.eigenvector(1);
    let u = f.map(|v| grid.volume() * v * v - 1.0);
    ProbeDirection::project(grid, &u)
}

/// Branch eigenfunction followed by `λ_i` when moving along `along` (t > 0).
fn right_branch_function(spec: &SpectralData, cluster: &Cluster, i: usize, along: &DVector<f64>) -> Result<DVector<f64>> {
    if cluster.is_simple() {
        return Ok(spec.eigenvector(i));
    }
    let (_, vecs) = cluster_matrix(spec, cluster, along)?.branches();
    let basis = spec.cluster_basis(cluster);
    Ok(basis * vecs.column(cluster.rank_of(i)))
}

fn squared(f: &DVector<f64>) -> DVector<f64> {
    f.component_mul(f)
}

/// Right derivative of the objective along `v`.
pub fn objective_right_derivative(spec: &SpectralData, target: Target, v: &DVector<f64>) -> Result<f64> {
    Ok(objective_derivative(spec, target, v)?.right)
}

/// One-sided derivatives of the objective along `v`.
pub fn objective_derivative(spec: &SpectralData, target: Target, v: &DVector<f64>) -> Result<DirectionalDerivative> {
    match target {
        Target::Eigenvalue(i) => {
            let c = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            one_sided_in_cluster(spec, &c, i, v)
        }
        Target::Gap(i, j) => {
            let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            let cj = detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?;
            crate::perturbation::gap_one_sided_in_clusters(spec, (&ci, i), (&cj, j), v)
        }
    }
}

/// Ascent direction of the objective in the sense requested (before applying
/// the sign): mean-projected squared branch eigenfunctions.
///
/// For a degenerate target the branch is picked from the cluster matrix of a
/// candidate direction, and the pick is refined once by feeding the result
/// back as the new candidate. The better of the two, measured by the
/// one-sided derivative in the optimization sense, is returned.
pub fn subgradient_direction(
    grid: &DomainGrid,
    spec: &SpectralData,
    objective: &ObjectiveSpec,
    candidate: Option<&DVector<f64>>,
) -> Result<ProbeDirection> {
    let sigma = objective.sense.sign();
    let build = |along: &DVector<f64>| -> Result<DVector<f64>> {
        match objective.target {
            Target::Eigenvalue(i) => {
                let c = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
                c.ensure_complete()?;
                let f = right_branch_function(spec, &c, i, along)?;
                project_mean_zero(grid, &squared(&f))
            }
            Target::Gap(i, j) => {
                let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
                let cj = detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?;
                ci.ensure_complete()?;
                cj.ensure_complete()?;
                if ci.first_index == cj.first_index {
                    return Ok(DVector::zeros(grid.n_nodes()));
                }
                let f = right_branch_function(spec, &ci, i, along)?;
                let g = right_branch_function(spec, &cj, j, along)?;
                project_mean_zero(grid, &(squared(&g) - squared(&f)))
            }
        }
    };
    let seed = match (candidate, objective.target) {
        (Some(c), _) => c.clone(),
        (None, Target::Eigenvalue(i)) => project_mean_zero(grid, &squared(&spec.eigenvector(i)))? * sigma,
        (None, Target::Gap(i, j)) => {
            project_mean_zero(grid, &(squared(&spec.eigenvector(j)) - squared(&spec.eigenvector(i))))? * sigma
        }
    };
    let d1 = build(&seed)?;
    let d2 = build(&(&d1 * sigma))?;
    let score = |d: &DVector<f64>| -> f64 {
        objective_right_derivative(spec, objective.target, &(d * sigma))
            .map(|r| sigma * r)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let best = if score(&d2) > score(&d1) { d2 } else { d1 };
    ProbeDirection::project(grid, &best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Base step `s₀`; the schedule is `s₀ / √t` times an adaptive factor.
    pub initial_step: f64,
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    /// Evaluate the criticality certificate every this many iterations (0 = never).
    pub certificate_every: usize,
    pub max_backtracks: usize,
}

impl OptimizerSettings {
    pub fn for_constraint(constraint: &ConstraintSpec) -> OptimizerSettings {
        OptimizerSettings {
            max_iters: 500,
            initial_step: 0.1 * constraint.bound_b,
            stagnation_window: 50,
            stagnation_tol: 1e-10,
            certificate_every: 10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
    /// Multiplicity of the cluster at the (first) target index.
    pub mult_i: usize,
    /// Multiplicity at the second gap index, when optimizing a gap.
    pub mult_j: Option<usize>,
    pub residual: Option<f64>,
    pub sup_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
}

impl IterateLog {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// First iteration whose potential touches the sup-norm bound.
    pub fn box_saturated_at(&self, bound_b: f64) -> Option<usize> {
        self.records.iter().find(|r| r.sup_norm >= bound_b - 1e-9).map(|r| r.iter)
    }

    /// CSV with header `iter,objective,step,mult_i,residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,objective,step,mult_i,residual")?;
        for r in &self.records {
            let res = r.residual.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.iter, r.objective, r.step, r.mult_i, res)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIters,
    Stagnation,
    /// Certificate reported the current potential critical.
    CertificateFeasible,
    /// The two gap indices merged into one cluster (zero gap).
    ZeroGap,
    /// No step along the direction improved the objective.
    NoImprovement,
    ZeroDirection,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub potential: Potential,
    pub log: IterateLog,
    pub stop: StopReason,
    /// Some node sits on the sup-norm bound.
    pub box_active: bool,
    /// Eigensolver failure that aborted the run; the log is partial.
    pub aborted: Option<String>,
}

fn multiplicities(spec: &SpectralData, target: Target) -> Result<(usize, Option<usize>)> {
    Ok(match target {
        Target::Eigenvalue(i) => (detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?.multiplicity, None),
        Target::Gap(i, j) => (
            detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?.multiplicity,
            Some(detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?.multiplicity),
        ),
    })
}

fn gap_merged(spec: &SpectralData, target: Target) -> Result<bool> {
    if let Target::Gap(i, j) = target {
        let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
        return Ok(ci.contains(j));
    }
    Ok(false)
}

fn certificate_check(spec: &SpectralData, target: Target) -> Result<(CertificateStatus, f64)> {
    match target {
        Target::Eigenvalue(i) => {
            let c = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            let cert = criticality_certificate(spec, &c)?;
            Ok((cert.status, cert.residual))
        }
        Target::Gap(i, j) => {
            let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            let cj = detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?;
            let cert = gap_certificate(spec, &ci, &cj)?;
            Ok((cert.status, cert.residual))
        }
    }
}

/// Projected subgradient iteration with backtracking on the objective.
pub fn run_optimizer(
    grid: &DomainGrid,
    objective: &ObjectiveSpec,
    constraint: &ConstraintSpec,
    q0: &Potential,
    settings: &OptimizerSettings,
) -> Result<OptimizeOutcome> {
    objective.target.validate()?;
    constraint.validate()?;
    if !constraint.is_satisfied(grid, q0) {
        return Err(Error::Precondition(format!(
            "initial potential violates constraint (mean {}, sup {})",
            q0.mean(),
            q0.sup_norm()
        )));
    }
    let target = objective.target;
    let sigma = objective.sense.sign();
    let mut q = q0.clone();
    let mut spec = solve_for(grid, &q, target)?;
    let mut obj = objective_value(&spec, target);
    let mut log = IterateLog::default();
    let (m_i, m_j) = multiplicities(&spec, target)?;
    log.records.push(IterateRecord {
        iter: 0,
        objective: obj,
        step: 0.0,
        mult_i: m_i,
        mult_j: m_j,
        residual: None,
        sup_norm: q.sup_norm(),
    });

    let mut scale = 1.0;
    let mut prev_dir: Option<DVector<f64>> = None;
    let mut stop = StopReason::MaxIters;
    let mut aborted = None;

    for t in 1..=settings.max_iters {
        if gap_merged(&spec, target)? && objective.sense == Sense::Minimize {
            stop = StopReason::ZeroGap;
            break;
        }
        let dir = subgradient_direction(grid, &spec, objective, prev_dir.as_ref().map(|d| d * sigma).as_ref())?;
        if dir.sup_norm() == 0.0 {
            stop = StopReason::ZeroDirection;
            break;
        }
        let base = settings.initial_step / (t as f64).sqrt();
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let s = base * scale;
            let trial = project_feasible(grid, &(q.values() + dir.values() * (sigma * s)), constraint)?;
            let trial_spec = match solve_for(grid, &trial, target) {
                Ok(sp) => sp,
                Err(e @ Error::Numerical { .. }) => {
                    aborted = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
            let trial_obj = objective_value(&trial_spec, target);
            if sigma * (trial_obj - obj) >= -1e-12 {
                accepted = Some((trial, trial_spec, trial_obj, s));
                break;
            }
            scale *= 0.5;
        }
        if aborted.is_some() {
            break;
        }
        let Some((trial, trial_spec, trial_obj, s)) = accepted else {
            stop = StopReason::NoImprovement;
            break;
        };
        q = trial;
        spec = trial_spec;
        obj = trial_obj;
        scale = (scale * 2.0).min(1e6);
        prev_dir = Some(dir.values().clone());

        let mut residual = None;
        let (m_i, m_j) = multiplicities(&spec, target)?;
        let check_cert = settings.certificate_every > 0 && t % settings.certificate_every == 0;
        let mut critical = false;
        if check_cert && !gap_merged(&spec, target)? {
            let (status, res) = certificate_check(&spec, target)?;
            residual = Some(res);
            critical = status == CertificateStatus::Feasible;
        }
        log.records.push(IterateRecord {
            iter: t,
            objective: obj,
            step: s,
            mult_i: m_i,
            mult_j: m_j,
            residual,
            sup_norm: q.sup_norm(),
        });
        if critical {
            stop = StopReason::CertificateFeasible;
            break;
        }
        let w = settings.stagnation_window;
        if log.records.len() > w {
            let recent = &log.records[log.records.len() - 1 - w..];
            let spread = recent.iter().map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max)
                - recent.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
            if spread <= settings.stagnation_tol {
                stop = StopReason::Stagnation;
                break;
            }
        }
    }
    if gap_merged(&spec, target)? && objective.sense == Sense::Minimize {
        stop = StopReason::ZeroGap;
    }
    let box_active = q.sup_norm() >= constraint.bound_b - 1e-9;
    Ok(OptimizeOutcome {
        potential: q,
        log,
        stop,
        box_active,
        aborted,
    })
}

/// Random smooth feasible potential: a few low Fourier modes (along x) with
/// random coefficients, rescaled so that the whole profile fits in the box.
pub fn random_feasible_potential(grid: &DomainGrid, constraint: &ConstraintSpec, seed: u64) -> Result<Potential> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51a7_7e55);
    let period = match grid.kind() {
        crate::domain::DomainKind::Circle { circumference } => circumference,
        crate::domain::DomainKind::Interval { length } => 2.0 * length,
        crate::domain::DomainKind::Torus2D { lx, .. } => lx,
    };
    let omega = 2.0 * std::f64::consts::PI / period;
    let modes: Vec<(f64, f64)> = (1..=4)
        .map(|k| {
            let amp = 1.0 / (k as f64);
            (amp * rng.random_range(-1.0..1.0), amp * rng.random_range(-1.0..1.0))
        })
        .collect();
    let shape = grid.sample(|x, _| {
        modes
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let th = (k + 1) as f64 * omega * x;
                a * th.cos() + b * th.sin()
            })
            .sum::<f64>()
    });
    let shape = project_mean_zero(grid, &shape)?;
    let room = constraint.bound_b - constraint.mean_c.abs();
    let fill = rng.random_range(0.2..0.9);
    let scale = if shape.amax() > 0.0 { fill * room / shape.amax() } else { 0.0 };
    let raw = shape.map(|v| constraint.mean_c + scale * v);
    project_feasible(grid, &raw, constraint)
}

/// Independent runs from several starts, in parallel; results keep the order of `starts`.
pub fn run_multistart(
    grid: &DomainGrid,
    objective: &ObjectiveSpec,
    constraint: &ConstraintSpec,
    starts: &[Potential],
    settings: &OptimizerSettings,
) -> Vec<Result<OptimizeOutcome>> {
    starts
        .par_iter()
        .map(|q0| run_optimizer(grid, objective, constraint, q0, settings))
        .collect()
}

/// Where a witness of non-minimality came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessSource {
    Certificate,
    Probe,
    ClusterBranch,
}

#[derive(Debug, Clone)]
pub struct Refutation {
    pub witness: Option<ProbeDirection>,
    pub derivative: Option<DirectionalDerivative>,
    pub source: Option<WitnessSource>,
    /// Objective values at `q + t u` for the three confirming steps.
    pub line_search: Vec<(f64, f64)>,
    pub tested: usize,
    pub budget_exhausted: bool,
}

/// Threshold on the one-sided derivative for a strict descent witness.
pub const DESCENT_THRESHOLD: f64 = 1e-6;
const LINE_SEARCH_STEP: f64 = 1e-3;

/// Search for a mean-zero `u` along which `λ_i` strictly decreases on one side.
pub fn refute_local_min(
    grid: &DomainGrid,
    q: &Potential,
    spec: &SpectralData,
    i: usize,
    probe_budget: usize,
    seed: u64,
) -> Result<Refutation> {
    refute_local_min_for(grid, q, spec, Target::Eigenvalue(i), None, probe_budget, seed)
}

/// Same search for an eigenvalue or a gap objective. With a constraint, only
/// directions in the tangent cone of the box at `q` are tried, on the `t > 0`
/// side, and the line search stays inside the box.
pub fn refute_local_min_for(
    grid: &DomainGrid,
    q: &Potential,
    spec: &SpectralData,
    target: Target,
    constraint: Option<&ConstraintSpec>,
    probe_budget: usize,
    seed: u64,
) -> Result<Refutation> {
    target.validate()?;
    let base = objective_value(spec, target);
    let mut tested = 0;

    let confirm = |u: &ProbeDirection, side: f64, t_max: f64| -> Result<Option<Vec<(f64, f64)>>> {
        let h = (LINE_SEARCH_STEP / u.sup_norm().max(f64::MIN_POSITIVE)).min(0.5 * t_max);
        let mut pts = Vec::with_capacity(3);
        for k in 0..3 {
            let t = side * h / f64::from(1u32 << k);
            let qt = q.perturbed(grid, t, u)?;
            let st = solve_for(grid, &qt, target)?;
            let v = objective_value(&st, target);
            if v >= base {
                return Ok(None);
            }
            pts.push((t, v));
        }
        Ok(Some(pts))
    };

    let mut candidates: Vec<(ProbeDirection, WitnessSource)> = Vec::new();
    match target {
        Target::Eigenvalue(i) => {
            let c = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            let cert = criticality_certificate(spec, &c)?;
            if let Some(u) = cert.separating_direction {
                candidates.push((u, WitnessSource::Certificate));
            }
        }
        Target::Gap(i, j) => {
            let ci = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
            let cj = detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?;
            if !ci.contains(j) {
                let cert = gap_certificate(spec, &ci, &cj)?;
                if let Some(u) = cert.separating_direction {
                    candidates.push((u, WitnessSource::Certificate));
                }
            }
        }
    }
    if probe_budget > 0 {
        for u in probe_suite(grid, probe_budget, seed)? {
            candidates.push((u, WitnessSource::Probe));
        }
    }
    // Squared cluster eigenfunctions, both signs.
    let mut branch_clusters = Vec::new();
    match target {
        Target::Eigenvalue(i) => branch_clusters.push(detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?),
        Target::Gap(i, j) => {
            branch_clusters.push(detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?);
            branch_clusters.push(detect_cluster(spec, j, DEFAULT_CLUSTER_TOL)?);
        }
    }
    for c in &branch_clusters {
        let basis = spec.cluster_basis(c);
        for col in basis.column_iter() {
            let f = col.into_owned();
            let u = ProbeDirection::normalized(grid, &squared(&f))?;
            if u.sup_norm() > 0.0 {
                candidates.push((u.scaled(-1.0), WitnessSource::ClusterBranch));
                candidates.push((u, WitnessSource::ClusterBranch));
            }
        }
    }

    let found = |u: ProbeDirection, d: DirectionalDerivative, source, pts, tested| Refutation {
        witness: Some(u),
        derivative: Some(d),
        source: Some(source),
        line_search: pts,
        tested,
        budget_exhausted: false,
    };
    for (u, source) in candidates {
        tested += 1;
        match constraint {
            None => {
                let d = match objective_derivative(spec, target, &u) {
                    Ok(d) => d,
                    Err(Error::DegenerateGap { .. }) => break,
                    Err(e) => return Err(e),
                };
                if !d.has_descent(DESCENT_THRESHOLD) {
                    continue;
                }
                let side = if d.right < -DESCENT_THRESHOLD { 1.0 } else { -1.0 };
                if let Some(pts) = confirm(&u, side, f64::INFINITY)? {
                    return Ok(found(u, d, source, pts, tested));
                }
            }
            Some(cons) => {
                for sign in [1.0, -1.0] {
                    let Some((v, t_max)) = tangent_direction(grid, q, cons, &(u.values() * sign))? else {
                        continue;
                    };
                    let d = match objective_derivative(spec, target, &v) {
                        Ok(d) => d,
                        Err(Error::DegenerateGap { .. }) => break,
                        Err(e) => return Err(e),
                    };
                    if d.right >= -DESCENT_THRESHOLD {
                        continue;
                    }
                    if let Some(pts) = confirm(&v, 1.0, t_max)? {
                        return Ok(found(v, d, source, pts, tested));
                    }
                }
            }
        }
    }
    Ok(Refutation {
        witness: None,
        derivative: None,
        source: None,
        line_search: Vec::new(),
        tested,
        budget_exhausted: true,
    })
}

/// Nodes within this distance of `±B` count as active.
const ACTIVE_TOL: f64 = 1e-9;

/// Closest mean-zero `v` to `u` with `v ≤ 0` where `q = B` and `v ≥ 0` where
/// `q = −B`, sup-normalized, plus the largest `t` keeping `q + t v` in the box.
pub fn tangent_direction(
    grid: &DomainGrid,
    q: &Potential,
    constraint: &ConstraintSpec,
    u: &DVector<f64>,
) -> Result<Option<(ProbeDirection, f64)>> {
    crate::error::check_len(grid.n_nodes(), u.len())?;
    let b = constraint.bound_b;
    let qv = q.values();
    let upper: Vec<bool> = qv.iter().map(|&x| x >= b - ACTIVE_TOL).collect();
    let lower: Vec<bool> = qv.iter().map(|&x| x <= -b + ACTIVE_TOL).collect();
    let shifted = |tau: f64| -> DVector<f64> {
        DVector::from_fn(u.len(), |k, _| {
            let v = u[k] - tau;
            if upper[k] {
                v.min(0.0)
            } else if lower[k] {
                v.max(0.0)
            } else {
                v
            }
        })
    };
    let w = grid.weights();
    let mean_at = |tau: f64| shifted(tau).dot(w);
    let span = u.amax() + 1.0;
    let (mut lo, mut hi) = (-span, span);
    if mean_at(lo) < 0.0 || mean_at(hi) > 0.0 {
        return Ok(None);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    let mut v = shifted(0.5 * (lo + hi));
    // Remove the leftover mean on nodes that can move both ways.
    let free: Vec<usize> = (0..v.len()).filter(|&k| !upper[k] && !lower[k]).collect();
    let fw: f64 = free.iter().map(|&k| w[k]).sum();
    if fw > 0.0 {
        let err = v.dot(w) / fw;
        for &k in &free {
            v[k] -= err;
        }
    }
    let sup = v.amax();
    if sup <= 1e-12 {
        return Ok(None);
    }
    v /= sup;
    let mut t_max = f64::INFINITY;
    for k in 0..v.len() {
        if v[k] > 0.0 {
            t_max = t_max.min((b - qv[k]).max(0.0) / v[k]);
        } else if v[k] < 0.0 {
            t_max = t_max.min((qv[k] + b).max(0.0) / -v[k]);
        }
    }
    if t_max <= 0.0 {
        return Ok(None);
    }
    Ok(Some((ProbeDirection::from_parts(v, 1.0), t_max)))
}
