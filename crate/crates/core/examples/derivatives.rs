// Usage: cargo run --example derivatives
//
// One-sided derivatives of λ₂ and λ₃ at the constant potential on the circle,
// where they form a double eigenvalue, checked against difference quotients.

use std::f64::consts::PI;

use critpot::domain::{build_grid, BoundaryCondition, DomainKind, Potential};
use critpot::perturbation::{cluster_matrix, one_sided_derivatives, ProbeDirection};
use critpot::spectral::{detect_cluster, solve, DEFAULT_CLUSTER_TOL};

fn main() -> critpot::Result<()> {
    let grid = build_grid(DomainKind::Circle { circumference: 2.0 * PI }, 256, BoundaryCondition::Closed)?;
    let q = Potential::constant(&grid, 0.0);
    let spec = solve(&grid, &q, 8)?;
    let cluster = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL)?;

    let directions = [
        ("cos 2x", ProbeDirection::project(&grid, &grid.sample(|x, _| (2.0 * x).cos()))?),
        ("sin 2x", ProbeDirection::project(&grid, &grid.sample(|x, _| (2.0 * x).sin()))?),
        ("cos x", ProbeDirection::project(&grid, &grid.sample(|x, _| x.cos()))?),
    ];
    let t = 1e-4;
    for (name, u) in &directions {
        println!("u = {name}: cluster slopes {:?}", cluster_matrix(&spec, &cluster, u)?.slopes());
        for i in [2, 3] {
            let d = one_sided_derivatives(&spec, i, u)?;
            let plus = solve(&grid, &q.perturbed(&grid, t, u)?, 8)?.eigenvalue(i);
            let minus = solve(&grid, &q.perturbed(&grid, -t, u)?, 8)?.eigenvalue(i);
            println!(
                "  λ{i}: left {:+.6} right {:+.6} | quotients {:+.6} {:+.6} | critical along u: {}",
                d.left,
                d.right,
                (spec.eigenvalue(i) - minus) / t,
                (plus - spec.eigenvalue(i)) / t,
                d.is_critical()
            );
        }
    }
    Ok(())
}
