//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every quantity a criterion asserts is recomputed here from an oracle that
//! does not go through the library's solver: a hand-assembled stencil matrix
//! handed to a dense eigensolver, closed-form spectra, or plain sums.

mod common;

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::{dense_eigenpairs, dense_eigenvalues, operator, oracle_eigenvalue, random_potential, Model};
use critpot::certificates::{
    criticality_certificate, extract_frame, full_criticality_report, gap_certificate, gram_function,
    CertificateStatus, Verdict,
};
use critpot::domain::{build_grid, BoundaryCondition, DomainGrid, DomainKind, Potential};
use critpot::optimize::{
    ground_state_ascent_direction, project_feasible, random_feasible_potential, refute_local_min,
    refute_local_min_for, run_multistart, run_optimizer, solve_for, ConstraintSpec, ObjectiveSpec,
    OptimizerSettings, Sense, StopReason, Target,
};
use critpot::perturbation::{cluster_matrix, one_sided_derivatives, probe_suite, simple_derivative, ProbeDirection};
use critpot::spectral::{detect_cluster, solve, SpectralData, DEFAULT_CLUSTER_TOL};
use critpot::verify::{run_suite, Suite, VerifySettings};
use nalgebra::DVector;

const N: usize = 256;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn potential(g: &DomainGrid, v: DVector<f64>) -> Potential {
    Potential::new(g, v).unwrap()
}

/// Oracle eigenvector normalized so that `Σ w f² = 1`.
fn oracle_eigenvector(model: Model, q: &[f64], i: usize, w: f64) -> DVector<f64> {
    let (_, vecs) = dense_eigenpairs(&operator(model, N, q));
    vecs.column(i - 1) / w.sqrt()
}

fn c1_discretization() -> Outcome {
    let mut worst_fd: f64 = 0.0;
    let mut worst_cont: f64 = 0.0;
    let cases: [(Model, Box<dyn Fn(usize) -> f64>, Vec<f64>); 3] = [
        (
            Model::Circle,
            Box::new(|k| 4.0 * (N as f64 / (2.0 * PI)).powi(2) * (PI * k as f64 / N as f64).sin().powi(2)),
            vec![0.0, 1.0, 1.0, 4.0, 4.0, 9.0],
        ),
        (
            Model::Dirichlet,
            Box::new(|k| 4.0 * (N as f64 / PI).powi(2) * (PI * k as f64 / (2.0 * N as f64)).sin().powi(2)),
            vec![1.0, 4.0, 9.0, 16.0, 25.0, 36.0],
        ),
        (
            Model::Neumann,
            Box::new(|k| 4.0 * (N as f64 / PI).powi(2) * (PI * k as f64 / (2.0 * N as f64)).sin().powi(2)),
            vec![0.0, 1.0, 4.0, 9.0, 16.0, 25.0],
        ),
    ];
    for (model, closed, continuum) in cases {
        let g = common::grid(model, N);
        let spec = solve(&g, &Potential::zero(&g), 6).unwrap();
        let mut fd: Vec<f64> = match model {
            Model::Circle => (0..N).map(&closed).collect(),
            Model::Dirichlet => (1..N).map(&closed).collect(),
            Model::Neumann => (0..N).map(&closed).collect(),
        };
        fd.sort_by(f64::total_cmp);
        for i in 0..6 {
            let lam = spec.eigenvalues()[i];
            worst_fd = worst_fd.max((lam - fd[i]).abs() / fd[i].abs().max(1.0));
            worst_cont = worst_cont.max((lam - continuum[i]).abs() / continuum[i].max(1.0));
        }
    }
    ensure(worst_fd <= 1e-9, || format!("closed-form rel err {worst_fd:.2e}"))?;
    ensure(worst_cont <= 1e-3, || format!("continuum rel err {worst_cont:.2e}"))?;
    Ok(format!("closed form {worst_fd:.2e} <= 1e-9, continuum {worst_cont:.2e} <= 1e-3"))
}

fn c2_first_variation() -> Outcome {
    let t = 1e-4;
    let mut worst: f64 = 0.0;
    let mut worst_rich: f64 = 0.0;
    let mut pairs = 0;
    let models = [Model::Circle, Model::Dirichlet, Model::Neumann];
    let mut seed = 0u64;
    while pairs < 20 {
        let model = models[pairs % 3];
        let i = if model == Model::Circle { 1 } else { 1 + pairs % 3 };
        let g = common::grid(model, N);
        let q = random_potential(&g, 1000 + seed, 1.5);
        let u = common::mean_zero(&g, &random_potential(&g, 2000 + seed, 1.0));
        seed += 1;
        let spec = solve(&g, &potential(&g, q.clone()), i + 2).unwrap();
        if !detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL).unwrap().is_simple() {
            continue;
        }
        let d = simple_derivative(&spec, i, &u).unwrap();
        let central = |h: f64| {
            let p: Vec<f64> = (&q + &u * h).iter().copied().collect();
            let m: Vec<f64> = (&q - &u * h).iter().copied().collect();
            (oracle_eigenvalue(model, N, &p, i) - oracle_eigenvalue(model, N, &m, i)) / (2.0 * h)
        };
        let (d1, d2) = (central(t), central(t / 2.0));
        let rich = (4.0 * d2 - d1) / 3.0;
        let scale = d1.abs().max(1e-2);
        worst = worst.max((d - d1).abs() / scale);
        worst_rich = worst_rich.max((rich - d1).abs() / scale);
        pairs += 1;
    }
    ensure(worst <= 1e-6, || format!("formula vs central difference rel err {worst:.2e}"))?;
    ensure(worst_rich <= 1e-6, || format!("Richardson disagreement {worst_rich:.2e}"))?;
    Ok(format!("20 pairs, rel err {worst:.2e} <= 1e-6, Richardson shift {worst_rich:.2e}"))
}

fn c3_cluster_eigenbasis() -> Outcome {
    let g = common::grid(Model::Circle, N);
    let spec = solve(&g, &Potential::zero(&g), 6).unwrap();
    let cluster = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL).unwrap();
    ensure(cluster.multiplicity == 2, || format!("multiplicity {}", cluster.multiplicity))?;
    let basis = spec.cluster_basis(&cluster);
    let w = g.weights();
    let mut worst_off: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for u in probe_suite(&g, 20, 33).unwrap() {
        let (slopes, vecs) = cluster_matrix(&spec, &cluster, &u).unwrap().branches();
        let rotated = &basis * &vecs;
        let off: f64 = (0..N).map(|x| w[x] * u[x] * rotated[(x, 0)] * rotated[(x, 1)]).sum();
        worst_off = worst_off.max(off.abs());

        let base = spec.eigenvalue(2);
        let mut consts = Vec::new();
        for t in [1e-2, 5e-3, 2.5e-3] {
            let p: Vec<f64> = (u.values() * t).iter().copied().collect();
            let ev = dense_eigenvalues(&operator(Model::Circle, N, &p));
            let err = (0..2).map(|k| (ev[1 + k] - base - t * slopes[k]).abs()).fold(0.0, f64::max);
            consts.push(err / (t * t));
        }
        for w2 in consts.windows(2) {
            let (a, b) = (w2[0], w2[1]);
            if a.max(b) > 1e-6 {
                worst_ratio = worst_ratio.max(a.max(b) / a.min(b).max(1e-12));
            }
        }
        ensure(consts[0] < 1e3, || format!("second-order constant {:.3e}", consts[0]))?;
    }
    ensure(worst_off <= 1e-10, || format!("off-diagonal {worst_off:.2e}"))?;
    ensure(worst_ratio <= 2.0, || format!("C(t) ratio under halving {worst_ratio:.3}"))?;
    Ok(format!("off-diagonal {worst_off:.2e} <= 1e-10, C ratio under halving {worst_ratio:.3} <= 2"))
}

fn c4_ground_state() -> Outcome {
    let mut worst: f64 = f64::NEG_INFINITY;
    for model in [Model::Circle, Model::Neumann] {
        let g = common::grid(model, N);
        for s in 0..50 {
            let q = random_potential(&g, 4000 + s, 3.0);
            let c = common::weighted_mean(&g, &q);
            let lam = oracle_eigenvalue(model, N, q.as_slice(), 1);
            worst = worst.max(lam - c);
        }
    }
    ensure(worst <= 1e-9, || format!("λ₁ − c reached {worst:.2e}"))?;

    let g = common::grid(Model::Circle, N);
    let cons = ConstraintSpec::new(0.3, 2.0).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Eigenvalue(1),
        sense: Sense::Maximize,
    };
    let starts: Vec<Potential> = (0..10).map(|s| random_feasible_potential(&g, &cons, 70 + s).unwrap()).collect();
    let mut dev: f64 = 0.0;
    let mut short: f64 = f64::NEG_INFINITY;
    for out in run_multistart(&g, &objective, &cons, &starts, &OptimizerSettings::for_constraint(&cons)) {
        let out = out.map_err(|e| e.to_string())?;
        ensure(out.aborted.is_none(), || format!("optimizer aborted: {:?}", out.aborted))?;
        let q = out.potential.values();
        dev = dev.max(q.add_scalar(-0.3).amax());
        short = short.max(0.3 - oracle_eigenvalue(Model::Circle, N, q.as_slice(), 1));
    }
    ensure(dev <= 1e-2, || format!("‖q − c‖∞ = {dev:.2e}"))?;
    ensure(short <= 1e-4, || format!("c − λ₁ = {short:.2e}"))?;
    Ok(format!("max λ₁−c {worst:.2e} over 100 potentials; 10 starts: ‖q−c‖∞ {dev:.2e}, c−λ₁ {short:.2e}"))
}

fn c5_dirichlet() -> Outcome {
    let g = common::grid(Model::Dirichlet, N);
    let w = g.weights()[0];
    let vol = g.volume();
    let mut potentials = vec![DVector::zeros(g.n_nodes())];
    potentials.extend((0..3).map(|s| random_potential(&g, 5000 + s, 2.0)));
    let mut min_margin = f64::INFINITY;
    let mut min_ascent = f64::INFINITY;
    for q in &potentials {
        let spec = solve(&g, &potential(&g, q.clone()), 6).unwrap();
        for i in 1..=5 {
            let cluster = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL).unwrap();
            let cert = criticality_certificate(&spec, &cluster).unwrap();
            ensure(cert.status == CertificateStatus::Infeasible, || format!("i={i}: {:?}", cert.status))?;
            let u = cert.separating_direction.ok_or("no separating direction")?;
            ensure(common::weighted_mean(&g, u.values()).abs() < 1e-12, || "direction not mean-zero".into())?;
            let f = oracle_eigenvector(Model::Dirichlet, q.as_slice(), i, w);
            let form: f64 = (0..g.n_nodes()).map(|x| w * u[x] * f[x] * f[x]).sum();
            min_margin = min_margin.min(form.abs() / u.sup_norm());
        }
        let f1 = oracle_eigenvector(Model::Dirichlet, q.as_slice(), 1, w);
        let v: DVector<f64> = f1.map(|x| vol * x * x - 1.0);
        let deriv: f64 = (0..g.n_nodes()).map(|x| w * v[x] * f1[x] * f1[x]).sum();
        let lib = simple_derivative(&spec, 1, &ground_state_ascent_direction(&g, &spec).unwrap()).unwrap();
        ensure(deriv > 0.0, || format!("derivative along V f₁² − 1 is {deriv:.3e}"))?;
        ensure(lib > 0.0, || format!("library ascent derivative {lib:.3e}"))?;
        min_ascent = min_ascent.min(deriv);
    }
    ensure(min_margin >= 1e-8, || format!("margin {min_margin:.2e}"))?;
    Ok(format!("20 Infeasible, min margin {min_margin:.3e} >= 1e-8, min ascent slope {min_ascent:.3e} > 0"))
}

fn c6_circle_critical() -> Outcome {
    let g = common::grid(Model::Circle, N);
    let h = 2.0 * PI / N as f64;
    let q = Potential::constant(&g, 0.7);
    let spec = solve(&g, &q, 6).unwrap();
    let cluster = detect_cluster(&spec, 2, DEFAULT_CLUSTER_TOL).unwrap();
    ensure(cluster.first_index == 2 && cluster.multiplicity == 2, || format!("{cluster:?}"))?;
    let cert = criticality_certificate(&spec, &cluster).unwrap();
    ensure(cert.status == CertificateStatus::Feasible, || format!("{:?}", cert.status))?;
    let basis = spec.cluster_basis(&cluster);
    let gram = cert.gram.clone().unwrap();
    let mut residual: f64 = 0.0;
    for x in 0..N {
        let mut s = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                s += gram[(a, b)] * basis[(x, a)] * basis[(x, b)];
            }
        }
        residual = residual.max((s - 1.0).abs());
    }
    ensure(residual <= 1e-8, || format!("residual {residual:.2e}"))?;

    let frame = extract_frame(&cert, &spec, &cluster).unwrap();
    let frame_err = (0..N).map(|x| (frame.iter().map(|f| f[x] * f[x]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    ensure(frame_err <= 1e-8, || format!("Σ f̃² − 1 = {frame_err:.2e}"))?;

    let lam = spec.eigenvalue(2);
    let mut recovered: f64 = 0.0;
    for x in 0..N {
        let grad2: f64 = frame
            .iter()
            .map(|f| ((f[(x + 1) % N] - f[(x + N - 1) % N]) / (2.0 * h)).powi(2))
            .sum();
        recovered = recovered.max((lam - grad2 - 0.7).abs());
    }
    ensure(recovered <= 1e-3, || format!("recovered potential off by {recovered:.2e}"))?;

    let mut worst_product = f64::NEG_INFINITY;
    let mut all_critical = true;
    for u in probe_suite(&g, 200, 66).unwrap() {
        let d = one_sided_derivatives(&spec, 2, &u).unwrap();
        worst_product = worst_product.max(d.left * d.right);
        all_critical &= d.is_critical();
    }
    ensure(all_critical, || format!("a probe had left·right = {worst_product:.2e}"))?;
    Ok(format!(
        "residual {residual:.2e}, frame {frame_err:.2e}, recovery {recovered:.2e}, max left·right {worst_product:.2e} over 200 probes"
    ))
}

fn c7_simple_neumann() -> Outcome {
    let g = common::grid(Model::Neumann, N);
    let q = Potential::zero(&g);
    let spec = solve(&g, &q, 4).unwrap();
    let report = full_criticality_report(&g, &q, &spec, 2, 50, 7).unwrap();
    ensure(report.multiplicity == 1, || format!("multiplicity {}", report.multiplicity))?;
    ensure(report.status == CertificateStatus::Infeasible, || format!("{:?}", report.status))?;
    ensure(report.verdict == Verdict::NotCritical, || format!("{:?}", report.verdict))?;
    let w = g.weights()[0];
    let f = oracle_eigenvector(Model::Neumann, &vec![0.0; N], 2, w);
    let f2 = f.map(|x| x * x);
    let gbest = f2.sum() / f2.map(|x| x * x).sum();
    let oracle_residual = f2.map(|x| (gbest * x - 1.0).abs()).max();
    ensure(oracle_residual > 1e-8, || "f₂² is constant, the 1×1 problem would be feasible".into())?;
    Ok(format!(
        "Infeasible / NotCritical; 1×1 oracle best residual {oracle_residual:.3}, f₂² ranges {:.3e}..{:.3e}",
        f2.min(),
        f2.max()
    ))
}

fn c8_no_local_min() -> Outcome {
    let mut weakest = f64::NEG_INFINITY;
    let mut count = 0;
    for model in [Model::Circle, Model::Neumann] {
        let g = common::grid(model, N);
        let cons = ConstraintSpec::new(0.2, 1.5).unwrap();
        let mut qs = vec![Potential::constant(&g, 0.2)];
        qs.extend((0..9).map(|s| random_feasible_potential(&g, &cons, 800 + s).unwrap()));
        for (k, q) in qs.iter().enumerate() {
            let spec: SpectralData = solve_for(&g, q, Target::Eigenvalue(2)).unwrap();
            let r = refute_local_min(&g, q, &spec, 2, 200, 90 + k as u64).unwrap();
            let d = r.derivative.ok_or_else(|| format!("{model:?} potential {k}: no witness in {} tries", r.tested))?;
            ensure(r.tested <= 200 + 8, || format!("used {} directions", r.tested))?;
            let slope = d.right.min(-d.left);
            ensure(slope <= -1e-6, || format!("witness slope {slope:.2e}"))?;
            let u: &ProbeDirection = r.witness.as_ref().unwrap();
            let base = oracle_eigenvalue(model, N, q.values().as_slice(), 2);
            ensure(r.line_search.len() == 3, || "line search missing".into())?;
            for &(t, _) in &r.line_search {
                let p = q.perturbed(&g, t, u).unwrap();
                let val = oracle_eigenvalue(model, N, p.values().as_slice(), 2);
                ensure(val < base, || format!("{model:?} potential {k}: no decrease at t = {t:e}"))?;
            }
            weakest = weakest.max(slope);
            count += 1;
        }
    }
    Ok(format!("{count} potentials refuted, weakest slope {weakest:.3e} <= -1e-6, line searches confirmed"))
}

fn gap_status(n: usize, i: usize, j: usize) -> (CertificateStatus, f64, f64) {
    let g = build_grid(DomainKind::Circle { circumference: 2.0 * PI }, n, BoundaryCondition::Closed).unwrap();
    let spec = solve(&g, &Potential::zero(&g), j + 4).unwrap();
    let ci = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL).unwrap();
    let cj = detect_cluster(&spec, j, DEFAULT_CLUSTER_TOL).unwrap();
    let cert = gap_certificate(&spec, &ci, &cj).unwrap();
    let (mut spread, mut mismatch) = (f64::NAN, f64::NAN);
    if let (Some(gi), Some(gj)) = (&cert.gram_i, &cert.gram_j) {
        let a = gram_function(gi, &spec.cluster_basis(&ci));
        let b = gram_function(gj, &spec.cluster_basis(&cj));
        spread = (a.max() - a.min()).max(b.max() - b.min());
        mismatch = (&a - &b).amax();
    }
    (cert.status, spread, mismatch)
}

fn c9_gap_critical() -> Outcome {
    let (status, spread, mismatch) = gap_status(N, 1, 2);
    ensure(status == CertificateStatus::Feasible, || format!("gap (1,2): {status:?}"))?;
    ensure(spread <= 1e-8, || format!("cone elements not constant: spread {spread:.2e}"))?;
    ensure(mismatch <= 1e-8, || format!("residual {mismatch:.2e}"))?;
    let (s1, _, _) = gap_status(N, 2, 4);
    let (s2, _, _) = gap_status(2 * N, 2, 4);
    ensure(s1 != CertificateStatus::Undecided, || "gap (2,4) undecided".into())?;
    ensure(s1 == s2, || format!("gap (2,4) mesh instability: {s1:?} at n, {s2:?} at 2n"))?;
    Ok(format!("gap (1,2) Feasible, residual {mismatch:.2e}, spread {spread:.2e}; gap (2,4) {s1:?} at n and 2n"))
}

fn c10_gap_no_min() -> Outcome {
    let g = common::grid(Model::Circle, N);
    let cons = ConstraintSpec::new(0.0, 1.0).unwrap();
    let settings = OptimizerSettings::for_constraint(&cons);
    let q0 = project_feasible(&g, &g.sample(|x, _| 0.3 * x.cos() + 0.2 * (2.0 * x).sin()), &cons).unwrap();
    let objective = ObjectiveSpec {
        target: Target::Gap(2, 3),
        sense: Sense::Minimize,
    };
    let out = run_optimizer(&g, &objective, &cons, &q0, &settings).unwrap();
    let ev = dense_eigenvalues(&operator(Model::Circle, N, out.potential.values().as_slice()));
    let gap23 = ev[2] - ev[1];
    ensure(gap23 <= 1e-3, || format!("G₂₃ stalled at {gap23:.3e}"))?;

    let objective = ObjectiveSpec {
        target: Target::Gap(1, 2),
        sense: Sense::Minimize,
    };
    let mut summary = Vec::new();
    for s in 0..3 {
        let q0 = random_feasible_potential(&g, &cons, 300 + s).unwrap();
        let out = run_optimizer(&g, &objective, &cons, &q0, &settings).unwrap();
        ensure(out.aborted.is_none(), || format!("aborted: {:?}", out.aborted))?;
        let ev = dense_eigenvalues(&operator(Model::Circle, N, out.potential.values().as_slice()));
        let gap = ev[1] - ev[0];
        if gap > 1e-3 && out.stop != StopReason::MaxIters {
            let spec = solve_for(&g, &out.potential, Target::Gap(1, 2)).unwrap();
            let r = refute_local_min_for(&g, &out.potential, &spec, Target::Gap(1, 2), Some(&cons), 200, 5 + s)
                .unwrap();
            ensure(r.witness.is_none(), || {
                format!("G₁₂ stalled at {gap:.4} ({:?}) with a descent witness", out.stop)
            })?;
        }
        summary.push(format!("{gap:.3}/{:?}", out.stop));
    }
    Ok(format!("G₂₃ reached {gap23:.2e} <= 1e-3; G₁₂ stops [{}] have no descent witness", summary.join(", ")))
}

fn c11_determinism() -> Outcome {
    let settings = VerifySettings { nodes: N, seed: 2024 };
    let a = run_suite(Suite::All, &settings).map_err(|e| e.to_string())?;
    let b = run_suite(Suite::All, &settings).map_err(|e| e.to_string())?;
    let ja = serde_json::to_string(&a).unwrap();
    let jb = serde_json::to_string(&b).unwrap();
    ensure(a == b && ja == jb, || "verify all differs between runs".into())?;
    let failed: Vec<&str> = a.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ensure(failed.is_empty(), || format!("failing checks: {}", failed.join("; ")))?;
    Ok(format!("{} checks identical across two runs, all passing", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1  discretization oracle", c1_discretization),
        ("2  first-variation formula", c2_first_variation),
        ("3  cluster eigenbasis and branches", c3_cluster_eigenbasis),
        ("4  ground state maximized by the constant", c4_ground_state),
        ("5  no critical potential on Dirichlet", c5_dirichlet),
        ("6  constants critical on the circle", c6_circle_critical),
        ("7  simple eigenvalue not critical", c7_simple_neumann),
        ("8  no local minimizers of λ₂", c8_no_local_min),
        ("9  gap critical at the constant", c9_gap_critical),
        ("10 no false gap minimizers", c10_gap_no_min),
        ("11 verify all is deterministic", c11_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}  ({secs:.1} s)  {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}  ({secs:.1} s)  {detail}");
            }
        }
    }
    let _ = panic::take_hook();
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
