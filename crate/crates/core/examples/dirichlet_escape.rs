// Usage: cargo run --example dirichlet_escape
//
// On a Dirichlet interval λ₁ has no critical potential: ascent never stalls
// in the interior and only stops once the box bound is hit. V f₁² − 1 is an
// explicit ascent direction at every potential.

use std::f64::consts::PI;

use critpot::domain::{build_grid, BoundaryCondition, DomainKind, Potential};
use critpot::optimize::{
    ground_state_ascent_direction, run_optimizer, ConstraintSpec, ObjectiveSpec, OptimizerSettings, Sense, Target,
};
use critpot::perturbation::simple_derivative;
use critpot::spectral::solve;

fn main() -> critpot::Result<()> {
    let grid = build_grid(DomainKind::Interval { length: PI }, 256, BoundaryCondition::Dirichlet)?;
    let q = Potential::zero(&grid);
    let spec = solve(&grid, &q, 4)?;
    let u = ground_state_ascent_direction(&grid, &spec)?;
    println!("q = 0: dλ₁ along V f₁² − 1 = {:.6}", simple_derivative(&spec, 1, &u)?);

    for bound in [1.0, 5.0, 10.0] {
        let cons = ConstraintSpec::new(0.0, bound)?;
        let objective = ObjectiveSpec {
            target: Target::Eigenvalue(1),
            sense: Sense::Maximize,
        };
        let out = run_optimizer(&grid, &objective, &cons, &q, &OptimizerSettings::for_constraint(&cons))?;
        let objs = out.log.objectives();
        println!(
            "B = {bound:>4}: λ₁ {:.6} -> {:.6}, box active {}, first touched at iteration {:?}, stop {:?}",
            objs[0],
            objs[objs.len() - 1],
            out.box_active,
            out.log.box_saturated_at(bound),
            out.stop
        );
    }
    Ok(())
}
