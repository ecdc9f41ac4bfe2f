// Usage: cargo run --example criticality
//
// Constant potentials on the circle are critical for every eigenvalue
// cluster; on a Dirichlet interval no potential is. The certificate either
// produces eigenfunctions whose squares sum to one or a direction along
// which the whole cluster moves the same way.

use std::f64::consts::PI;

use critpot::certificates::{criticality_certificate, extract_frame, full_criticality_report};
use critpot::domain::{build_grid, BoundaryCondition, DomainKind, Potential};
use critpot::spectral::{detect_cluster, recover_potential, solve, DEFAULT_CLUSTER_TOL};

fn main() -> critpot::Result<()> {
    let circle = build_grid(DomainKind::Circle { circumference: 2.0 * PI }, 256, BoundaryCondition::Closed)?;
    let q = Potential::constant(&circle, 0.7);
    let spec = solve(&circle, &q, 8)?;
    let cluster = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL)?;
    let cert = criticality_certificate(&spec, &cluster)?;
    println!("circle, q = 0.7, λ₂: {:?}, residual {:.2e}", cert.status, cert.residual);
    println!("  Gram matrix {:.6}", cert.gram.as_ref().unwrap());
    let frame = extract_frame(&cert, &spec, &cluster)?;
    let recovered = recover_potential(&frame, spec.eigenvalue(2), &circle)?;
    println!(
        "  {} frame functions; recovered potential within {:.2e} of 0.7",
        frame.len(),
        recovered.values().add_scalar(-0.7).amax()
    );
    let report = full_criticality_report(&circle, &q, &spec, 2, 200, 7)?;
    println!("  probes critical: {}/{}", report.probes_critical, report.probes_tested);

    let dirichlet = build_grid(DomainKind::Interval { length: PI }, 256, BoundaryCondition::Dirichlet)?;
    let q = Potential::from_fn(&dirichlet, |x, _| 0.5 * (2.0 * x).cos());
    let spec = solve(&dirichlet, &q, 8)?;
    for i in 1..=5 {
        let cluster = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
        let cert = criticality_certificate(&spec, &cluster)?;
        println!(
            "dirichlet λ{i}: {:?}, separation margin {:.3e}",
            cert.status,
            cert.margin.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
