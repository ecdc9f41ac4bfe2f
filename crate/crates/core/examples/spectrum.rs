// Usage: cargo run --example spectrum
//
// Lowest eigenvalues of −Δ_h + q against the closed-form finite-difference
// spectrum and the continuum values.

use std::f64::consts::PI;

use critpot::domain::{build_grid, build_torus, BoundaryCondition, DomainKind, Potential};
use critpot::spectral::{detect_cluster, solve, DEFAULT_CLUSTER_TOL};

fn main() -> critpot::Result<()> {
    let cases = [
        ("circle", DomainKind::Circle { circumference: 2.0 * PI }, BoundaryCondition::Closed),
        ("interval/dirichlet", DomainKind::Interval { length: PI }, BoundaryCondition::Dirichlet),
        ("interval/neumann", DomainKind::Interval { length: PI }, BoundaryCondition::Neumann),
    ];
    for (name, kind, bc) in cases {
        let grid = build_grid(kind, 256, bc)?;
        let spec = solve(&grid, &Potential::zero(&grid), 6)?;
        let exact = grid.laplacian_spectrum_closed_form();
        println!("{name}");
        for i in 1..=6 {
            let c = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
            println!(
                "  λ{i} = {:>12.8}   closed form {:>12.8}   multiplicity {}",
                spec.eigenvalue(i),
                exact[i - 1],
                c.multiplicity
            );
        }
    }

    // Shifting by a constant shifts the whole spectrum.
    let grid = build_grid(DomainKind::Circle { circumference: 2.0 * PI }, 256, BoundaryCondition::Closed)?;
    let shifted = solve(&grid, &Potential::constant(&grid, 0.7), 3)?;
    println!("circle, q = 0.7: {:?}", shifted.eigenvalues());

    let torus = build_torus(DomainKind::Torus2D { lx: 2.0 * PI, ly: 2.0 * PI }, 24, 24, BoundaryCondition::Closed)?;
    let spec = solve(&torus, &Potential::zero(&torus), 10)?;
    println!("torus 24x24: {:.5?}", spec.eigenvalues());
    Ok(())
}
