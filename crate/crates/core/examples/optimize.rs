// Usage: cargo run --example optimize
//
// Projected subgradient runs on the circle: λ₁ is driven to the constant
// potential, and the gap λ₃ − λ₂ closes.

use std::f64::consts::PI;

use critpot::domain::{build_grid, BoundaryCondition, DomainKind};
use critpot::optimize::{
    project_feasible, random_feasible_potential, run_optimizer, ConstraintSpec, ObjectiveSpec, OptimizerSettings,
    Sense, Target,
};

fn main() -> critpot::Result<()> {
    let grid = build_grid(DomainKind::Circle { circumference: 2.0 * PI }, 256, BoundaryCondition::Closed)?;

    let cons = ConstraintSpec::new(0.0, 5.0)?;
    let q0 = random_feasible_potential(&grid, &cons, 17)?;
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(1),
        sense: Sense::Maximize,
    };
    let out = run_optimizer(&grid, &objective, &cons, &q0, &OptimizerSettings::for_constraint(&cons))?;
    let objs = out.log.objectives();
    println!(
        "max λ₁: {:.6} -> {:.3e} in {} iterations ({:?}); ‖q‖∞ = {:.2e}",
        objs[0],
        objs[objs.len() - 1],
        objs.len() - 1,
        out.stop,
        out.potential.sup_norm()
    );

    let cons = ConstraintSpec::new(0.0, 1.0)?;
    let q0 = project_feasible(&grid, &grid.sample(|x, _| 0.3 * x.cos() + 0.2 * (2.0 * x).sin()), &cons)?;
    let objective = ObjectiveSpec {
        target: Target::Gap(2, 3),
        sense: Sense::Minimize,
    };
    let out = run_optimizer(&grid, &objective, &cons, &q0, &OptimizerSettings::for_constraint(&cons))?;
    let objs = out.log.objectives();
    println!(
        "min λ₃ − λ₂: {:.4} -> {:.2e} in {} iterations ({:?})",
        objs[0],
        objs[objs.len() - 1],
        objs.len() - 1,
        out.stop
    );
    out.log.write_csv(std::io::stdout().lock())?;
    Ok(())
}
