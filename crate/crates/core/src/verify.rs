//! Verification suites: each reproduces one qualitative statement about
//! critical potentials numerically and returns pass/fail checks.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{criticality_certificate, extract_frame, gap_certificate, gram_function, CertificateStatus};
use crate::domain::{build_grid, BoundaryCondition, DomainGrid, DomainKind, Potential};
use crate::error::{Error, Result};
use crate::optimize::{
    ground_state_ascent_direction, objective_value, project_feasible, random_feasible_potential, refute_local_min,
    refute_local_min_for, run_multistart, run_optimizer, solve_for, ConstraintSpec, ObjectiveSpec, OptimizerSettings,
    Sense, StopReason, Target,
};
use crate::perturbation::{cluster_matrix, one_sided_in_cluster, probe_suite, simple_derivative};
use crate::report::Check;
use crate::spectral::{detect_cluster, recover_potential, solve, DEFAULT_CLUSTER_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    /// `λ₁(q) ≤ mean(q)` on closed and Neumann domains; the optimizer finds the constant.
    GroundState,
    /// No Dirichlet potential is critical for any `λ_i`.
    Dirichlet,
    /// Constant potentials on the circle are critical.
    CircleCritical,
    /// `λ₂` has no local minimizer on closed and Neumann domains.
    NoLocalMinL2,
    /// The zero potential on the circle is critical for the gap `λ₂ − λ₁`.
    GapCritical,
    /// Gap minimization reaches zero gap or stops only where no descent exists.
    GapNoMin,
    All,
}

impl Suite {
    pub const INDIVIDUAL: [Suite; 6] = [
        Suite::GroundState,
        Suite::Dirichlet,
        Suite::CircleCritical,
        Suite::NoLocalMinL2,
        Suite::GapCritical,
        Suite::GapNoMin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::GroundState => "ground-state",
            Suite::Dirichlet => "dirichlet",
            Suite::CircleCritical => "circle-critical",
            Suite::NoLocalMinL2 => "no-local-min-l2",
            Suite::GapCritical => "gap-critical",
            Suite::GapNoMin => "gap-no-min",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Suite> {
        let s = s.trim().to_ascii_lowercase();
        if s == "no-local-min-λ2" {
            return Ok(Suite::NoLocalMinL2);
        }
        Suite::INDIVIDUAL
            .iter()
            .chain(std::iter::once(&Suite::All))
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite `{s}` (ground-state, dirichlet, circle-critical, no-local-min-l2, gap-critical, gap-no-min, all)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifySettings {
    /// Cells per 1D domain.
    pub nodes: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> VerifySettings {
        VerifySettings { nodes: 256, seed: 1 }
    }
}

/// Runs a suite; `All` runs the individual suites in parallel and concatenates in a fixed order.
pub fn run_suite(suite: Suite, settings: &VerifySettings) -> Result<Vec<Check>> {
    let prefix = |s: Suite, checks: Vec<Check>| -> Vec<Check> {
        checks
            .into_iter()
            .map(|mut c| {
                c.name = format!("{}: {}", s.name(), c.name);
                c
            })
            .collect()
    };
    match suite {
        Suite::All => {
            let parts: Vec<Result<Vec<Check>>> = Suite::INDIVIDUAL
                .par_iter()
                .map(|&s| run_suite(s, settings))
                .collect();
            let mut out = Vec::new();
            for p in parts {
                out.extend(p?);
            }
            Ok(out)
        }
        Suite::GroundState => Ok(prefix(suite, ground_state(settings)?)),
        Suite::Dirichlet => Ok(prefix(suite, dirichlet(settings)?)),
        Suite::CircleCritical => Ok(prefix(suite, circle_critical(settings)?)),
        Suite::NoLocalMinL2 => Ok(prefix(suite, no_local_min_l2(settings)?)),
        Suite::GapCritical => Ok(prefix(suite, gap_critical(settings)?)),
        Suite::GapNoMin => Ok(prefix(suite, gap_no_min(settings)?)),
    }
}

/// Independent sub-seed for stream `k`.
fn stream(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17) ^ k
}

fn circle(n: usize) -> Result<DomainGrid> {
    build_grid(DomainKind::Circle { circumference: 2.0 * PI }, n, BoundaryCondition::Closed)
}

fn interval(n: usize, bc: BoundaryCondition) -> Result<DomainGrid> {
    build_grid(DomainKind::Interval { length: PI }, n, bc)
}

fn ground_state(s: &VerifySettings) -> Result<Vec<Check>> {
    let cons = ConstraintSpec::new(0.3, 2.0)?;
    let mut checks = Vec::new();
    for (label, grid) in [
        ("circle", circle(s.nodes)?),
        ("neumann", interval(s.nodes, BoundaryCondition::Neumann)?),
    ] {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..50 {
            let q = random_feasible_potential(&grid, &cons, stream(s.seed, k))?;
            let spec = solve(&grid, &q, 1)?;
            worst = worst.max(spec.eigenvalue(1) - q.mean());
        }
        checks.push(Check::at_most(format!("{label} max λ₁ − c over 50 potentials"), worst, 1e-9));
    }

    let grid = circle(s.nodes)?;
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(1),
        sense: Sense::Maximize,
    };
    let starts = (0..10)
        .map(|k| random_feasible_potential(&grid, &cons, stream(s.seed, 1000 + k)))
        .collect::<Result<Vec<_>>>()?;
    let settings = OptimizerSettings::for_constraint(&cons);
    let (mut dev, mut gap) = (0.0f64, f64::NEG_INFINITY);
    for out in run_multistart(&grid, &objective, &cons, &starts, &settings) {
        let out = out?;
        dev = dev.max(out.potential.values().add_scalar(-cons.mean_c).amax());
        let last = out.log.records.last().map_or(f64::NEG_INFINITY, |r| r.objective);
        gap = gap.max(cons.mean_c - last);
    }
    checks.push(Check::at_most("optimizer ‖q − c‖∞ over 10 starts", dev, 1e-2));
    checks.push(Check::at_most("optimizer c − λ₁ over 10 starts", gap, 1e-4));
    Ok(checks)
}

fn dirichlet(s: &VerifySettings) -> Result<Vec<Check>> {
    let grid = interval(s.nodes, BoundaryCondition::Dirichlet)?;
    let cons = ConstraintSpec::new(0.0, 2.0)?;
    let mut potentials = vec![Potential::zero(&grid)];
    for k in 0..3 {
        potentials.push(random_feasible_potential(&grid, &cons, stream(s.seed, 2000 + k))?);
    }
    let (mut min_margin, mut all_infeasible, mut definite) = (f64::INFINITY, true, true);
    let mut min_ascent = f64::INFINITY;
    for q in &potentials {
        let spec = solve(&grid, q, 8)?;
        for i in 1..=5 {
            let c = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
            let cert = criticality_certificate(&spec, &c)?;
            all_infeasible &= cert.status == CertificateStatus::Infeasible;
            match &cert.separating_direction {
                Some(u) => {
                    let slopes = cluster_matrix(&spec, &c, u)?.slopes();
                    let m = if slopes[0] > 0.0 {
                        slopes[0]
                    } else {
                        -slopes[slopes.len() - 1]
                    };
                    definite &= m > 0.0;
                    min_margin = min_margin.min(m);
                }
                None => {
                    definite = false;
                    min_margin = f64::NEG_INFINITY;
                }
            }
        }
        let u = ground_state_ascent_direction(&grid, &spec)?;
        min_ascent = min_ascent.min(simple_derivative(&spec, 1, &u)?);
    }
    Ok(vec![
        Check::holds("certificate Infeasible for i = 1..5 at 4 potentials", all_infeasible),
        Check::holds("separating directions give definite forms", definite),
        Check::at_least("smallest separation margin", min_margin, 1e-8),
        Check::at_least("derivative of λ₁ along V f₁² − 1", min_ascent, 1e-12),
    ])
}

fn circle_critical(s: &VerifySettings) -> Result<Vec<Check>> {
    let grid = circle(s.nodes)?;
    let c = 0.7;
    let q = Potential::constant(&grid, c);
    let spec = solve(&grid, &q, 6)?;
    let cluster = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL)?;
    let cert = criticality_certificate(&spec, &cluster)?;
    let mut checks = vec![
        Check::holds("multiplicity of λ₂ is 2", cluster.multiplicity == 2),
        Check::holds("certificate Feasible", cert.status == CertificateStatus::Feasible),
        Check::at_most("certificate residual", cert.residual, 1e-8),
    ];
    if cert.status == CertificateStatus::Feasible {
        let frame = extract_frame(&cert, &spec, &cluster)?;
        let sum_sq = frame
            .iter()
            .fold(DVector::zeros(grid.n_nodes()), |acc, f| acc + f.component_mul(f));
        checks.push(Check::at_most("frame Σ f² − 1", sum_sq.add_scalar(-1.0).amax(), 1e-8));
        let rq = recover_potential(&frame, spec.eigenvalue(2), &grid)?;
        checks.push(Check::at_most(
            "recovered potential deviation",
            rq.values().add_scalar(-c).amax(),
            1e-3,
        ));
    }
    let probes = probe_suite(&grid, 200, s.seed)?;
    let mut worst_product = f64::NEG_INFINITY;
    for u in &probes {
        let d = one_sided_in_cluster(&spec, &cluster, 2, u)?;
        worst_product = worst_product.max(d.left * d.right);
    }
    checks.push(Check::at_most("max left·right over 200 probes", worst_product, 1e-12));
    Ok(checks)
}

/// Ten test potentials: the constant plus nine random ones.
fn test_potentials(grid: &DomainGrid, seed: u64) -> Result<Vec<Potential>> {
    let cons = ConstraintSpec::new(0.2, 1.5)?;
    let mut out = vec![Potential::constant(grid, cons.mean_c)];
    for k in 0..9 {
        out.push(random_feasible_potential(grid, &cons, stream(seed, 3000 + k))?);
    }
    Ok(out)
}

fn no_local_min_l2(s: &VerifySettings) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, grid) in [
        ("circle", circle(s.nodes)?),
        ("neumann", interval(s.nodes, BoundaryCondition::Neumann)?),
    ] {
        let (mut found, mut worst) = (0, f64::NEG_INFINITY);
        let pots = test_potentials(&grid, s.seed)?;
        for q in &pots {
            let spec = solve_for(&grid, q, Target::Eigenvalue(2))?;
            let r = refute_local_min(&grid, q, &spec, 2, 200, s.seed)?;
            if let (Some(_), Some(d)) = (&r.witness, &r.derivative) {
                found += 1;
                // Strength of the one-sided descent, as a negative slope.
                let slope = d.right.min(-d.left);
                worst = worst.max(slope);
            } else {
                worst = f64::MAX;
            }
        }
        checks.push(Check::holds(
            format!("{label}: descent witness at {found}/{} potentials", pots.len()),
            found == pots.len(),
        ));
        checks.push(Check::at_most(format!("{label}: weakest witness slope"), worst, -1e-6));
    }
    Ok(checks)
}

fn gap_critical(s: &VerifySettings) -> Result<Vec<Check>> {
    let grid = circle(s.nodes)?;
    let q = Potential::zero(&grid);
    let spec = solve(&grid, &q, 8)?;
    let c1 = detect_cluster(&spec, 1, DEFAULT_CLUSTER_TOL)?;
    let c2 = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL)?;
    let cert = gap_certificate(&spec, &c1, &c2)?;
    let mut checks = vec![
        Check::holds("gap (1,2) certificate Feasible", cert.status == CertificateStatus::Feasible),
        Check::at_most("gap (1,2) residual", cert.residual, 1e-8),
    ];
    if let (Some(gi), Some(gj)) = (&cert.gram_i, &cert.gram_j) {
        let fi = gram_function(gi, &spec.cluster_basis(&c1));
        let fj = gram_function(gj, &spec.cluster_basis(&c2));
        let spread = |v: &DVector<f64>| v.max() - v.min();
        checks.push(Check::at_most(
            "gap (1,2) cone elements constant",
            spread(&fi).max(spread(&fj)),
            1e-8,
        ));
    }
    let status_at = |n: usize| -> Result<CertificateStatus> {
        let g = circle(n)?;
        let sp = solve(&g, &Potential::zero(&g), 8)?;
        let a = detect_cluster(&sp, 2, DEFAULT_CLUSTER_TOL)?;
        let b = detect_cluster(&sp, 4, DEFAULT_CLUSTER_TOL)?;
        Ok(gap_certificate(&sp, &a, &b)?.status)
    };
    let (coarse, fine) = (status_at(s.nodes)?, status_at(2 * s.nodes)?);
    checks.push(
        Check::holds(
            "gap (2,4) decided, same status at n and 2n",
            coarse == fine && coarse != CertificateStatus::Undecided,
        )
        .with_detail(format!("{coarse:?} / {fine:?}")),
    );
    Ok(checks)
}

fn gap_no_min(s: &VerifySettings) -> Result<Vec<Check>> {
    let grid = circle(s.nodes)?;
    let cons = ConstraintSpec::new(0.0, 1.0)?;
    let raw = grid.sample(|x, _| 0.3 * x.cos() + 0.2 * (2.0 * x).sin());
    let q0 = project_feasible(&grid, &raw, &cons)?;
    let objective = ObjectiveSpec {
        target: Target::Gap(2, 3),
        sense: Sense::Minimize,
    };
    let settings = OptimizerSettings::for_constraint(&cons);
    let out = run_optimizer(&grid, &objective, &cons, &q0, &settings)?;
    let spec = solve_for(&grid, &out.potential, Target::Gap(2, 3))?;
    let mut checks = vec![Check::at_most(
        "minimized gap λ₃ − λ₂",
        objective_value(&spec, Target::Gap(2, 3)),
        1e-3,
    )];

    // Gap λ₂ − λ₁: wherever a run stalls above 1e-3, no feasible strict descent may exist.
    let objective = ObjectiveSpec {
        target: Target::Gap(1, 2),
        sense: Sense::Minimize,
    };
    let starts = (0..3)
        .map(|k| random_feasible_potential(&grid, &cons, stream(s.seed, 4000 + k)))
        .collect::<Result<Vec<_>>>()?;
    let (mut false_minima, mut stalls) = (0, 0);
    for out in run_multistart(&grid, &objective, &cons, &starts, &settings) {
        let out = out?;
        let spec = solve_for(&grid, &out.potential, Target::Gap(1, 2))?;
        if objective_value(&spec, Target::Gap(1, 2)) <= 1e-3 || out.stop == StopReason::MaxIters {
            continue;
        }
        stalls += 1;
        let r = refute_local_min_for(&grid, &out.potential, &spec, Target::Gap(1, 2), Some(&cons), 200, s.seed)?;
        if r.witness.is_some() {
            false_minima += 1;
        }
    }
    checks.push(
        Check::at_most("false local minima of λ₂ − λ₁", false_minima as f64, 0.0)
            .with_detail(format!("{stalls} stalled runs examined")),
    );
    Ok(checks)
}
