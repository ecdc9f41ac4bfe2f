mod common;

use common::{random_potential, Model};
use critpot::certificates::{criticality_certificate, CertificateStatus};
use critpot::domain::Potential;
use critpot::optimize::{
    objective_value, project_feasible, random_feasible_potential, refute_local_min, refute_local_min_for,
    run_multistart, run_optimizer, solve_for, ConstraintSpec, ObjectiveSpec, OptimizerSettings, Sense, StopReason,
    Target, DESCENT_THRESHOLD,
};
use critpot::spectral::{detect_cluster, solve, DEFAULT_CLUSTER_TOL};
use nalgebra::DVector;
use proptest::prelude::*;

fn feasible(g: &critpot::domain::DomainGrid, q: &Potential, cons: &ConstraintSpec) -> bool {
    (common::weighted_mean(g, q.values()) - cons.mean_c).abs() <= 1e-10 && q.sup_norm() <= cons.bound_b + 1e-12
}

#[test]
fn ascent_is_monotone_and_feasible() {
    let g = common::grid(Model::Neumann, 128);
    let cons = ConstraintSpec::new(0.1, 1.0).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(1),
        sense: Sense::Maximize,
    };
    let mut settings = OptimizerSettings::for_constraint(&cons);
    settings.max_iters = 60;
    for seed in 0..3 {
        let q0 = random_feasible_potential(&g, &cons, seed).unwrap();
        assert!(feasible(&g, &q0, &cons));
        let out = run_optimizer(&g, &objective, &cons, &q0, &settings).unwrap();
        assert!(out.aborted.is_none());
        assert!(feasible(&g, &out.potential, &cons));
        let objs = out.log.objectives();
        for w in objs.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(out.log.records.iter().all(|r| r.sup_norm <= cons.bound_b + 1e-12));
        let last = solve(&g, &out.potential, 2).unwrap().eigenvalue(1);
        assert!((last - objs[objs.len() - 1]).abs() < 1e-10);
    }
}

#[test]
fn gap_minimization_descends() {
    let g = common::grid(Model::Circle, 128);
    let cons = ConstraintSpec::new(0.0, 1.0).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Gap(2, 3),
        sense: Sense::Minimize,
    };
    let q0 = project_feasible(&g, &g.sample(|x, _| 0.3 * x.cos() + 0.2 * (2.0 * x).sin()), &cons).unwrap();
    let out = run_optimizer(&g, &objective, &cons, &q0, &OptimizerSettings::for_constraint(&cons)).unwrap();
    let objs = out.log.objectives();
    assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(objs[objs.len() - 1] <= 1e-3);
    assert!(feasible(&g, &out.potential, &cons));
}

#[test]
fn stationary_maximizers_of_lambda_two_are_degenerate() {
    let g = common::grid(Model::Circle, 128);
    let cons = ConstraintSpec::new(0.0, 3.0).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(2),
        sense: Sense::Maximize,
    };
    let starts: Vec<Potential> = (0..3).map(|s| random_feasible_potential(&g, &cons, 40 + s).unwrap()).collect();
    for out in run_multistart(&g, &objective, &cons, &starts, &OptimizerSettings::for_constraint(&cons)) {
        let out = out.unwrap();
        let spec = solve(&g, &out.potential, 6).unwrap();
        let c = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL).unwrap();
        let cert = criticality_certificate(&spec, &c).unwrap();
        let certified = out.stop == StopReason::CertificateFeasible || cert.status == CertificateStatus::Feasible;
        if certified && !out.box_active {
            assert!(c.multiplicity >= 2, "simple λ₂ certified critical");
        }
        if c.multiplicity == 1 {
            assert_ne!(cert.status, CertificateStatus::Feasible);
        }
    }
}

#[test]
fn multistart_preserves_start_order() {
    let g = common::grid(Model::Neumann, 64);
    let cons = ConstraintSpec::new(0.0, 1.0).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(1),
        sense: Sense::Maximize,
    };
    let mut settings = OptimizerSettings::for_constraint(&cons);
    settings.max_iters = 5;
    let starts: Vec<Potential> = (0..4).map(|s| random_feasible_potential(&g, &cons, s).unwrap()).collect();
    let outs = run_multistart(&g, &objective, &cons, &starts, &settings);
    for (q0, out) in starts.iter().zip(outs) {
        let first = out.unwrap().log.objectives()[0];
        assert!((first - solve(&g, q0, 1).unwrap().eigenvalue(1)).abs() < 1e-12);
    }
}

#[test]
fn refute_finds_witness_for_lambda_two_at_constant() {
    for model in [Model::Circle, Model::Neumann] {
        let g = common::grid(model, 128);
        let q = Potential::constant(&g, 0.4);
        let spec = solve_for(&g, &q, Target::Eigenvalue(2)).unwrap();
        let r = refute_local_min(&g, &q, &spec, 2, 200, 3).unwrap();
        let d = r.derivative.expect("witness");
        assert!(d.right <= -DESCENT_THRESHOLD || d.left >= DESCENT_THRESHOLD);
        assert!(r.source.is_some());
        let u = r.witness.unwrap();
        let base = spec.eigenvalue(2);
        for &(t, val) in &r.line_search {
            let direct = common::oracle_eigenvalue(model, 128, q.perturbed(&g, t, &u).unwrap().values().as_slice(), 2);
            assert!((direct - val).abs() < 1e-9);
            assert!(val < base);
        }
    }
}

#[test]
fn ground_state_has_no_first_order_descent_at_constant() {
    let g = common::grid(Model::Circle, 128);
    let q = Potential::constant(&g, 0.0);
    let spec = solve_for(&g, &q, Target::Eigenvalue(1)).unwrap();
    let r = refute_local_min_for(&g, &q, &spec, Target::Eigenvalue(1), None, 100, 1).unwrap();
    // f₁ is constant, so every mean-zero u has zero first variation.
    assert!(r.witness.is_none() && r.derivative.is_none());
    assert!(r.tested >= 100);
}

#[test]
fn constraint_validation() {
    assert!(ConstraintSpec::new(0.0, -1.0).is_err());
    assert!(ConstraintSpec::new(2.0, 1.0).is_err());
    assert!(Target::Gap(3, 2).validate().is_err());
    assert!(Target::Eigenvalue(0).validate().is_err());
    let g = common::grid(Model::Circle, 32);
    let spec = solve(&g, &Potential::zero(&g), 3).unwrap();
    assert!((objective_value(&spec, Target::Gap(1, 2)) - spec.eigenvalue(2)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_feasible_and_idempotent(seed in 0u64..1000, c in -0.8f64..0.8, b in 0.9f64..3.0) {
        let g = common::grid(Model::Neumann, 40);
        let cons = ConstraintSpec::new(c, b).unwrap();
        let raw: DVector<f64> = random_potential(&g, seed, 4.0);
        let p = project_feasible(&g, &raw, &cons).unwrap();
        prop_assert!(feasible(&g, &p, &cons));
        let again = project_feasible(&g, p.values(), &cons).unwrap();
        prop_assert!((again.values() - p.values()).amax() < 1e-12);
        prop_assert!(cons.is_satisfied(&g, &p));
    }
}
