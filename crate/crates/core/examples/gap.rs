// Usage: cargo run --example gap
//
// Criticality of the gap λ_j − λ_i: both clusters must carry PSD combinations
// of squared eigenfunctions that agree pointwise.

use std::f64::consts::PI;

use critpot::certificates::gap_certificate;
use critpot::domain::{build_grid, BoundaryCondition, DomainKind, Potential};
use critpot::perturbation::{gap_one_sided_derivatives, probe_suite};
use critpot::spectral::{detect_cluster, solve, DEFAULT_CLUSTER_TOL};

fn main() -> critpot::Result<()> {
    for (name, kind, bc) in [
        ("circle", DomainKind::Circle { circumference: 2.0 * PI }, BoundaryCondition::Closed),
        ("dirichlet", DomainKind::Interval { length: PI }, BoundaryCondition::Dirichlet),
    ] {
        let grid = build_grid(kind, 256, bc)?;
        let spec = solve(&grid, &Potential::zero(&grid), 8)?;
        for (i, j) in [(1, 2), (2, 4)] {
            let ci = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
            let cj = detect_cluster(&spec, j, DEFAULT_CLUSTER_TOL)?;
            let cert = gap_certificate(&spec, &ci, &cj)?;
            println!(
                "{name} gap ({i},{j}) = {:.6}: {:?}, residual {:.2e}, margin {:?}",
                spec.eigenvalue(j) - spec.eigenvalue(i),
                cert.status,
                cert.residual,
                cert.margin
            );
        }
        let probes = probe_suite(&grid, 50, 3)?;
        let critical = probes
            .iter()
            .filter(|u| gap_one_sided_derivatives(&spec, 1, 2, u).map(|d| d.is_critical()).unwrap_or(false))
            .count();
        println!("  gap (1,2) critical along {critical}/50 probes");
    }
    Ok(())
}
