//! Subcommand implementations. Each reads a [`RunConfig`], writes its
//! artifacts into the output directory and returns the report (also written
//! as `report.json`).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::certificates::{
    criticality_certificate, extract_frame, full_criticality_report, gap_certificate, CertificateStatus,
};
use crate::config::{Format, PotentialPreset, RunConfig};
use crate::domain::{DomainGrid, Potential};
use crate::error::{Error, Result};
use crate::optimize::{
    objective_value, project_feasible, random_feasible_potential, run_multistart, ConstraintSpec, ObjectiveSpec,
    OptimizeOutcome, OptimizerSettings, Sense, Target,
};
use crate::perturbation::{
    gap_one_sided_in_clusters, one_sided_in_cluster, probe_suite, DirectionalDerivative, ProbeDirection,
};
use crate::report::{Check, RunReport};
use crate::spectral::{assemble, detect_cluster, recover_potential, solve, SpectralData, DEFAULT_CLUSTER_TOL};
use crate::verify::{run_suite, Suite, VerifySettings};

/// Writes `x[,y],<name>` rows.
pub fn write_node_csv(path: &Path, grid: &DomainGrid, columns: &[(&str, &DVector<f64>)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let coord_header = if grid.dim() == 2 { "x,y" } else { "x" };
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(out, "{coord_header},{}", names.join(","))?;
    for (k, p) in grid.coords().iter().enumerate() {
        if grid.dim() == 2 {
            write!(out, "{},{}", p[0], p[1])?;
        } else {
            write!(out, "{}", p[0])?;
        }
        for (_, col) in columns {
            write!(out, ",{}", col[k])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn setup(cfg: &RunConfig, out: &Path) -> Result<(DomainGrid, Potential)> {
    fs::create_dir_all(out)?;
    let grid = cfg.grid()?;
    let q = cfg.build_potential(&grid)?;
    Ok((grid, q))
}

fn finish(report: RunReport, out: &Path) -> Result<RunReport> {
    report.write(out)?;
    Ok(report)
}

fn eigen_residual(grid: &DomainGrid, q: &Potential, spec: &SpectralData) -> Result<f64> {
    let h = assemble(grid, q)?;
    let mut worst: f64 = 0.0;
    for i in 1..=spec.len() {
        let f = spec.eigenvector(i);
        let r = &h * &f - &f * spec.eigenvalue(i);
        worst = worst.max(grid.norm(&r) / (1.0 + spec.eigenvalue(i).abs()));
    }
    Ok(worst)
}

#[derive(Serialize)]
struct ClusterRow {
    first: usize,
    multiplicity: usize,
    value: f64,
    truncated: bool,
}

fn cluster_table(spec: &SpectralData) -> Result<Vec<ClusterRow>> {
    let mut rows = Vec::new();
    let mut i = 1;
    while i <= spec.len() {
        let c = detect_cluster(spec, i, DEFAULT_CLUSTER_TOL)?;
        rows.push(ClusterRow {
            first: c.first_index,
            multiplicity: c.multiplicity,
            value: c.value,
            truncated: c.truncated,
        });
        i = c.last_index() + 1;
    }
    Ok(rows)
}

fn spectrum_size(cfg: &RunConfig, grid: &DomainGrid, needed: usize) -> Result<usize> {
    let k = cfg.task.parse::<usize>("count")?.unwrap_or(needed + 6);
    if k < needed {
        return Err(Error::Config(format!("`count` = {k} is below the required index {needed}")));
    }
    Ok(k.min(grid.n_nodes()))
}

/// Eigenvalue JSON, eigenvector CSV and cluster table.
pub fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys("task", &["count"])?;
    let (grid, q) = setup(cfg, out)?;
    let k = cfg.task.parse::<usize>("count")?.unwrap_or(10).min(grid.n_nodes());
    let spec = solve(&grid, &q, k)?;
    let mut report = RunReport::new("spectrum", Some(cfg));
    report.eigenvalues = spec.eigenvalues().to_vec();
    report.insert("clusters", cluster_table(&spec)?)?;
    report.checks.push(Check::at_most("eigenpair residual", eigen_residual(&grid, &q, &spec)?, 1e-8));
    if cfg.output.wants(Format::Json) {
        spec.write_eigenvalues_json(File::create(out.join("eigenvalues.json"))?)?;
        report.artifacts.push("eigenvalues.json".into());
    }
    if cfg.output.wants(Format::Csv) {
        spec.write_eigenvectors_csv(BufWriter::new(File::create(out.join("eigenvectors.csv"))?))?;
        write_node_csv(&out.join("potential.csv"), &grid, &[("q", q.values())])?;
        report.artifacts.extend(["eigenvectors.csv".into(), "potential.csv".into()]);
    }
    finish(report, out)
}

/// A direction preset (`fourier(...)` or `file(...)`) turned into a probe.
fn direction_from_preset(cfg: &RunConfig, grid: &DomainGrid, text: &str, line: usize) -> Result<ProbeDirection> {
    let preset: PotentialPreset = text.parse().map_err(|e| match e {
        Error::Config(message) => Error::Parse { line, message },
        other => other,
    })?;
    let v = preset.build(grid, &cfg.base_dir)?;
    let u = ProbeDirection::normalized(grid, v.values())?;
    if u.sup_norm() == 0.0 {
        return Err(Error::Parse {
            line,
            message: "direction is constant; nothing is left after removing the mean".into(),
        });
    }
    Ok(u)
}

/// Probe directions requested by `direction` and/or `probes`.
fn directions(cfg: &RunConfig, grid: &DomainGrid, default_probes: usize) -> Result<Vec<ProbeDirection>> {
    let mut dirs = Vec::new();
    if let Some(e) = cfg.task.get("direction") {
        dirs.push(direction_from_preset(cfg, grid, &e.value, e.line)?);
    }
    let default = if dirs.is_empty() { default_probes } else { 0 };
    let count = cfg.task.parse::<usize>("probes")?.unwrap_or(default);
    if count > 0 {
        let seed = cfg.require_seed("random probe directions")?;
        dirs.extend(probe_suite(grid, count, seed)?);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeRow {
    pub u_id: usize,
    pub i: usize,
    pub left: f64,
    pub right: f64,
    pub critical: bool,
    pub fd_left: f64,
    pub fd_right: f64,
}

/// One-sided difference quotient with one Richardson step.
fn fd_one_sided(grid: &DomainGrid, q: &Potential, u: &ProbeDirection, i: usize, k: usize, t: f64) -> Result<f64> {
    let base = solve(grid, q, k)?.eigenvalue(i);
    let quotient = |s: f64| -> Result<f64> {
        let v = solve(grid, &q.perturbed(grid, s, u)?, k)?.eigenvalue(i);
        Ok((v - base) / s)
    };
    Ok(2.0 * quotient(t / 2.0)? - quotient(t)?)
}

/// One-sided derivatives along configured directions, with finite-difference columns.
pub fn cmd_derivative(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys("task", &["index", "direction", "probes", "fd_step", "count"])?;
    let (grid, q) = setup(cfg, out)?;
    let i: usize = cfg.task.require("task", "index")?;
    let t = cfg.task.number("fd_step")?.unwrap_or(1e-4);
    let k = spectrum_size(cfg, &grid, i)?;
    let spec = solve(&grid, &q, k)?;
    let cluster = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
    cluster.ensure_complete()?;
    let dirs = directions(cfg, &grid, 20)?;

    let mut rows = Vec::with_capacity(dirs.len());
    let mut worst: f64 = 0.0;
    for (u_id, u) in dirs.iter().enumerate() {
        let d = one_sided_in_cluster(&spec, &cluster, i, u)?;
        let fd_right = fd_one_sided(&grid, &q, u, i, k, t)?;
        let fd_left = fd_one_sided(&grid, &q, u, i, k, -t)?;
        worst = worst
            .max((fd_right - d.right).abs() / d.right.abs().max(1.0))
            .max((fd_left - d.left).abs() / d.left.abs().max(1.0));
        rows.push(DerivativeRow {
            u_id,
            i,
            left: d.left,
            right: d.right,
            critical: d.is_critical(),
            fd_left,
            fd_right,
        });
    }

    let mut report = RunReport::new("derivative", Some(cfg));
    report.eigenvalues = spec.eigenvalues().to_vec();
    report.insert("multiplicity", cluster.multiplicity)?;
    report.insert("position", cluster.position(i))?;
    report.insert("rows", &rows)?;
    report.checks.push(
        Check::at_most("finite-difference agreement (relative)", worst, 1e-5)
            .with_detail(format!("fd step {t:e}, one Richardson step")),
    );
    if cfg.output.wants(Format::Csv) {
        let mut w = BufWriter::new(File::create(out.join("derivatives.csv"))?);
        writeln!(w, "u_id,i,left,right,critical,fd_left,fd_right")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.u_id, r.i, r.left, r.right, r.critical, r.fd_left, r.fd_right
            )?;
        }
        w.flush()?;
        report.artifacts.push("derivatives.csv".into());
    }
    finish(report, out)
}

/// Criticality certificate, probe suite and (on success) frame and recovered potential.
pub fn cmd_criticality(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys("task", &["index", "probes", "count"])?;
    let (grid, q) = setup(cfg, out)?;
    let i: usize = cfg.task.require("task", "index")?;
    let probes = cfg.task.parse::<usize>("probes")?.unwrap_or(200);
    let seed = if probes > 0 {
        cfg.require_seed("the probe suite is random")?
    } else {
        0
    };
    let k = spectrum_size(cfg, &grid, i)?;
    let spec = solve(&grid, &q, k)?;
    let cluster = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
    let cert = criticality_certificate(&spec, &cluster)?;
    let crit = full_criticality_report(&grid, &q, &spec, i, probes, seed)?;

    let mut report = RunReport::new("criticality", Some(cfg));
    report.eigenvalues = spec.eigenvalues().to_vec();
    report
        .checks
        .push(Check::holds("certificate decided", cert.status != CertificateStatus::Undecided));
    let mut direction_csv = None;
    match cert.status {
        CertificateStatus::Feasible => {
            report.checks.push(Check::at_most("certificate residual", cert.residual, 1e-8));
            if crit.sufficiency_applies && probes > 0 {
                report.checks.push(Check::holds(
                    format!("probes critical {}/{}", crit.probes_critical, crit.probes_tested),
                    crit.probes_critical == crit.probes_tested,
                ));
            }
            if cfg.output.wants(Format::Csv) {
                let frame = extract_frame(&cert, &spec, &cluster)?;
                let names: Vec<String> = (1..=frame.len()).map(|a| format!("f{a}")).collect();
                let cols: Vec<(&str, &DVector<f64>)> = names.iter().map(String::as_str).zip(frame.iter()).collect();
                write_node_csv(&out.join("frame.csv"), &grid, &cols)?;
                let rq = recover_potential(&frame, spec.eigenvalue(i), &grid)?;
                write_node_csv(&out.join("recovered_potential.csv"), &grid, &[("q", rq.values())])?;
                report.artifacts.extend(["frame.csv".into(), "recovered_potential.csv".into()]);
            }
        }
        CertificateStatus::Infeasible => {
            report
                .checks
                .push(Check::at_least("separation margin", cert.margin.unwrap_or(f64::NEG_INFINITY), 1e-8));
            if let (Some(u), true) = (&cert.separating_direction, cfg.output.wants(Format::Csv)) {
                write_node_csv(&out.join("separating_direction.csv"), &grid, &[("u", u.values())])?;
                direction_csv = Some("separating_direction.csv".to_string());
                report.artifacts.push("separating_direction.csv".into());
            }
        }
        CertificateStatus::Undecided => {}
    }
    let record = cert.record(direction_csv);
    if cfg.output.wants(Format::Json) {
        write_json(&out.join("certificate.json"), &record)?;
        report.artifacts.push("certificate.json".into());
    }
    report.insert("criticality", &crit)?;
    report.insert("certificate", &record)?;
    finish(report, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub u_id: usize,
    pub i: usize,
    pub j: usize,
    pub left: f64,
    pub right: f64,
    pub critical: bool,
}

/// Gap certificate plus one-sided gap derivatives over probes.
pub fn cmd_gap(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys("task", &["i", "j", "probes", "direction", "count"])?;
    let (grid, q) = setup(cfg, out)?;
    let i: usize = cfg.task.require("task", "i")?;
    let j: usize = cfg.task.require("task", "j")?;
    Target::Gap(i, j).validate()?;
    let k = spectrum_size(cfg, &grid, j)?;
    let spec = solve(&grid, &q, k)?;
    let ci = detect_cluster(&spec, i, DEFAULT_CLUSTER_TOL)?;
    let cj = detect_cluster(&spec, j, DEFAULT_CLUSTER_TOL)?;
    let cert = gap_certificate(&spec, &ci, &cj)?;

    let mut report = RunReport::new("gap", Some(cfg));
    report.eigenvalues = spec.eigenvalues().to_vec();
    report.insert("gap", spec.eigenvalue(j) - spec.eigenvalue(i))?;
    report
        .checks
        .push(Check::holds("certificate decided", cert.status != CertificateStatus::Undecided));
    match cert.status {
        CertificateStatus::Feasible if !cert.by_degeneracy => {
            report.checks.push(Check::at_most("certificate residual", cert.residual, 1e-8))
        }
        CertificateStatus::Infeasible => report
            .checks
            .push(Check::at_least("separation margin", cert.margin.unwrap_or(f64::NEG_INFINITY), 1e-8)),
        _ => {}
    }

    let mut rows = Vec::new();
    if !ci.contains(j) {
        for (u_id, u) in directions(cfg, &grid, 50)?.iter().enumerate() {
            let d: DirectionalDerivative = gap_one_sided_in_clusters(&spec, (&ci, i), (&cj, j), u)?;
            rows.push(GapRow {
                u_id,
                i,
                j,
                left: d.left,
                right: d.right,
                critical: d.is_critical(),
            });
        }
    }
    let mut direction_csv = None;
    if cfg.output.wants(Format::Csv) {
        if let Some(u) = &cert.separating_direction {
            write_node_csv(&out.join("separating_direction.csv"), &grid, &[("u", u.values())])?;
            direction_csv = Some("separating_direction.csv".to_string());
            report.artifacts.push("separating_direction.csv".into());
        }
        let mut w = BufWriter::new(File::create(out.join("gap_derivatives.csv"))?);
        writeln!(w, "u_id,i,j,left,right,critical")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{},{}", r.u_id, r.i, r.j, r.left, r.right, r.critical)?;
        }
        w.flush()?;
        report.artifacts.push("gap_derivatives.csv".into());
    }
    let record = cert.record(direction_csv);
    if cfg.output.wants(Format::Json) {
        write_json(&out.join("certificate.json"), &record)?;
        report.artifacts.push("certificate.json".into());
    }
    report.insert("certificate", &record)?;
    report.insert("rows", &rows)?;
    finish(report, out)
}

fn parse_objective(cfg: &RunConfig) -> Result<ObjectiveSpec> {
    let e = cfg.task.get("objective").ok_or_else(|| Error::Parse {
        line: cfg.task.line,
        message: "missing key `objective` in [task]".into(),
    })?;
    let bad = || Error::Parse {
        line: e.line,
        message: format!("cannot parse objective `{}` (eigenvalue(i) or gap(i, j))", e.value),
    };
    let v = e.value.to_ascii_lowercase().replace(' ', "");
    let args = |prefix: &str| -> Option<Vec<usize>> {
        let inner = v.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
        inner.split(',').map(|x| x.parse().ok()).collect()
    };
    let target = if let Some(a) = args("eigenvalue") {
        match a[..] {
            [i] => Target::Eigenvalue(i),
            _ => return Err(bad()),
        }
    } else if let Some(a) = args("gap") {
        match a[..] {
            [i, j] => Target::Gap(i, j),
            _ => return Err(bad()),
        }
    } else {
        return Err(bad());
    };
    target.validate().map_err(|err| match err {
        Error::Config(message) => Error::Parse { line: e.line, message },
        other => other,
    })?;
    let sense = match cfg.task.get("sense").map(|s| s.value.to_ascii_lowercase()) {
        None => Sense::Maximize,
        Some(s) if s == "maximize" || s == "max" => Sense::Maximize,
        Some(s) if s == "minimize" || s == "min" => Sense::Minimize,
        Some(s) => {
            return Err(Error::Parse {
                line: cfg.task.get("sense").map_or(0, |x| x.line),
                message: format!("unknown sense `{s}` (maximize, minimize)"),
            })
        }
    };
    Ok(ObjectiveSpec { target, sense })
}

#[derive(Serialize)]
struct RunSummary {
    start: usize,
    stop: crate::optimize::StopReason,
    iterations: usize,
    initial_objective: f64,
    final_objective: f64,
    box_active: bool,
    box_saturated_at: Option<usize>,
    aborted: Option<String>,
    log_csv: String,
}

/// Projected subgradient runs; the first start is the configured potential
/// projected onto the constraint set, further starts are random.
pub fn cmd_optimize(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys(
        "task",
        &["objective", "sense", "mean", "bound", "max_iters", "step0", "starts", "certificate_every"],
    )?;
    let (grid, q) = setup(cfg, out)?;
    let objective = parse_objective(cfg)?;
    let mean_c = cfg.task.number("mean")?.unwrap_or(q.mean());
    let bound_b = cfg.task.number("bound")?.ok_or_else(|| Error::Parse {
        line: cfg.task.line,
        message: "missing key `bound` in [task]".into(),
    })?;
    let constraint = ConstraintSpec::new(mean_c, bound_b)?;
    let mut settings = OptimizerSettings::for_constraint(&constraint);
    if let Some(m) = cfg.task.parse::<usize>("max_iters")? {
        settings.max_iters = m;
    }
    if let Some(s) = cfg.task.number("step0")? {
        settings.initial_step = s;
    }
    if let Some(c) = cfg.task.parse::<usize>("certificate_every")? {
        settings.certificate_every = c;
    }
    let n_starts = cfg.task.parse::<usize>("starts")?.unwrap_or(1).max(1);
    let mut starts = vec![project_feasible(&grid, q.values(), &constraint)?];
    if n_starts > 1 {
        let seed = cfg.require_seed("random restarts")?;
        for k in 1..n_starts {
            starts.push(random_feasible_potential(&grid, &constraint, seed.wrapping_add(k as u64))?);
        }
    }
    let outcomes: Vec<OptimizeOutcome> = run_multistart(&grid, &objective, &constraint, &starts, &settings)
        .into_iter()
        .collect::<Result<_>>()?;

    let sigma = objective.sense.sign();
    let score = |o: &OptimizeOutcome| sigma * o.log.records.last().map_or(f64::NEG_INFINITY, |r| r.objective);
    let best = (0..outcomes.len())
        .max_by(|&a, &b| score(&outcomes[a]).total_cmp(&score(&outcomes[b])))
        .unwrap_or(0);

    let mut report = RunReport::new("optimize", Some(cfg));
    let mut summaries = Vec::new();
    let (mut mean_err, mut sup_excess, mut worst_drop) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for (s, o) in outcomes.iter().enumerate() {
        let name = if outcomes.len() == 1 {
            "iterates.csv".to_string()
        } else {
            format!("iterates_{s}.csv")
        };
        if cfg.output.wants(Format::Csv) {
            o.log.write_csv(BufWriter::new(File::create(out.join(&name))?))?;
            report.artifacts.push(name.clone());
        }
        let objs = o.log.objectives();
        for w in objs.windows(2) {
            worst_drop = worst_drop.max(sigma * (w[0] - w[1]));
        }
        mean_err = mean_err.max((o.potential.mean() - constraint.mean_c).abs());
        sup_excess = sup_excess.max(o.potential.sup_norm() - constraint.bound_b);
        summaries.push(RunSummary {
            start: s,
            stop: o.stop,
            iterations: o.log.records.len().saturating_sub(1),
            initial_objective: objs.first().copied().unwrap_or(f64::NAN),
            final_objective: objs.last().copied().unwrap_or(f64::NAN),
            box_active: o.box_active,
            box_saturated_at: o.log.box_saturated_at(constraint.bound_b),
            aborted: o.aborted.clone(),
            log_csv: name,
        });
    }
    let final_q = &outcomes[best].potential;
    let spec = crate::optimize::solve_for(&grid, final_q, objective.target)?;
    report.eigenvalues = spec.eigenvalues().to_vec();
    report.insert("objective", objective)?;
    report.insert("constraint", constraint)?;
    report.insert("best_start", best)?;
    report.insert("final_objective", objective_value(&spec, objective.target))?;
    report.insert("runs", &summaries)?;
    report.checks.push(Check::at_most("mean constraint error", mean_err, 1e-10));
    report.checks.push(Check::at_most("sup-norm excess over bound", sup_excess, 1e-12));
    report.checks.push(Check::at_most("largest objective regression", worst_drop, 1e-12));
    report.checks.push(Check::holds(
        "no eigensolver abort",
        outcomes.iter().all(|o| o.aborted.is_none()),
    ));
    if cfg.output.wants(Format::Csv) {
        write_node_csv(&out.join("potential.csv"), &grid, &[("q", final_q.values())])?;
        report.artifacts.push("potential.csv".into());
    }
    finish(report, out)
}

/// Runs a verification suite (`suite` key, default `all`).
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.task.check_keys("task", &["suite", "nodes"])?;
    fs::create_dir_all(out)?;
    let suite: Suite = match cfg.task.get("suite") {
        None => Suite::All,
        Some(e) => e.value.parse().map_err(|err| match err {
            Error::Config(message) => Error::Parse { line: e.line, message },
            other => other,
        })?,
    };
    let settings = VerifySettings {
        nodes: cfg.task.parse::<usize>("nodes")?.unwrap_or(256),
        seed: cfg.require_seed("verification suites draw random potentials and probes")?,
    };
    let mut report = RunReport::new("verify", Some(cfg));
    report.insert("suite", suite.name())?;
    report.insert("settings", settings)?;
    report.checks = run_suite(suite, &settings)?;
    finish(report, out)
}

/// Dispatch by subcommand name.
pub fn run_command(name: &str, cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    match name {
        "spectrum" => cmd_spectrum(cfg, out),
        "derivative" => cmd_derivative(cfg, out),
        "criticality" => cmd_criticality(cfg, out),
        "gap" => cmd_gap(cfg, out),
        "optimize" => cmd_optimize(cfg, out),
        "verify" => cmd_verify(cfg, out),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}
