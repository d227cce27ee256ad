use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use fairshed::grid::Delta;
use fairshed::kkt::fast_solve;
use fairshed::learn::{self, Dataset, SweepAxis, SweepSpec, TrainConfig, TrainedPredictor};
use fairshed::risk::{self, LoadDistribution};
use fairshed::solver::BindingReport;
use fairshed::{
    binding_status, build, load_case, solve, BindingPattern, GridCase, LoadVector,
    PrimalDualSolution, QuadraticProgram, SolveStatus, SolverOptions,
};

use crate::artifact::RunArtifact;
use crate::{Exit, Global, EXIT_INFEASIBLE, EXIT_IO, EXIT_MAX_ITER, EXIT_SINGULAR};

fn read_case(global: &Global, path: &Path) -> Result<GridCase> {
    let mut case = load_case(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(lambda) = global.lambda {
        case.lambda = lambda;
    }
    if global.copper_plate {
        case.copper_plate = true;
    }
    case.validate()?;
    Ok(case)
}

fn output_path(global: &Global, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&global.output_dir)
        .with_context(|| format!("creating {}", global.output_dir.display()))?;
    Ok(global.output_dir.join(name))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Position of the single load attached to bus `bus`.
fn load_at_bus(case: &GridCase, bus: i64) -> Result<usize> {
    let mut hits = case.loads.iter().enumerate().filter(|(_, l)| l.bus == bus);
    match (hits.next(), hits.next()) {
        (Some((k, _)), None) => Ok(k),
        (None, _) => bail!("bus {bus} has no load"),
        (Some(_), Some(_)) => bail!("bus {bus} has more than one load"),
    }
}

/// Nominal demands with `BUS=MW` overrides applied.
fn demands(case: &GridCase, overrides: &[String]) -> Result<LoadVector> {
    let mut d = case.demands();
    for o in overrides {
        let (bus, mw) = o
            .split_once('=')
            .with_context(|| format!("load override `{o}` is not of the form BUS=MW"))?;
        let bus: i64 = bus.trim().parse().with_context(|| format!("bad bus id in `{o}`"))?;
        let mw: f64 = mw.trim().parse().with_context(|| format!("bad demand in `{o}`"))?;
        d[load_at_bus(case, bus)?] = mw;
    }
    Ok(LoadVector::new(d)?)
}

fn status_exit(status: SolveStatus) -> Exit {
    let code = match status {
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::MaxIterations => EXIT_MAX_ITER,
        SolveStatus::Optimal => 0,
    };
    Exit {
        code,
        message: format!("solver status: {status}"),
    }
}

/// Names the fairness families whose removal alone makes the instance
/// feasible.
fn diagnose_infeasibility(case: &GridCase, d: &LoadVector, opts: &SolverOptions) -> Vec<String> {
    let n = case.n_loads() as f64;
    let relaxations: [(&str, Box<dyn Fn(&mut GridCase)>); 4] = [
        ("pairwise spread (delta)", Box::new(|c| c.fairness.delta = None)),
        ("proportionality (gamma)", Box::new(move |c| c.fairness.gamma = n)),
        ("feature orthogonality (epsilon)", Box::new(|c| c.features.clear())),
        (
            "shed limits (s_max)",
            Box::new(|c| c.loads.iter_mut().for_each(|l| l.s_max = 1.0)),
        ),
    ];
    let quick = SolverOptions {
        crossover: false,
        ..*opts
    };
    relaxations
        .iter()
        .filter(|(_, relax)| {
            let mut c = case.clone();
            relax(&mut c);
            build(&c, d)
                .map(|qp| solve(&qp, &quick).status == SolveStatus::Optimal)
                .unwrap_or(false)
        })
        .map(|(name, _)| name.to_string())
        .collect()
}

fn split<'a>(qp: &QuadraticProgram, x: &'a [f64]) -> [&'a [f64]; 4] {
    let l = &qp.layout;
    [
        &x[l.theta.clone()],
        &x[l.gen.clone()],
        &x[l.flow.clone()],
        &x[l.shed.clone()],
    ]
}

fn tau_bits(pattern: &BindingPattern) -> Vec<u8> {
    pattern.tau.iter().map(|&t| u8::from(t)).collect()
}

fn solution_json(
    case: &GridCase,
    d: &LoadVector,
    qp: &QuadraticProgram,
    sol: &PrimalDualSolution,
    report: Option<&BindingReport>,
) -> serde_json::Value {
    let [theta, g, f, s] = split(qp, &sol.x);
    let mut out = json!({
        "case": case.name,
        "status": sol.status,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "residuals": sol.residuals,
        "loads": d.as_slice(),
        "theta": theta,
        "g": g,
        "f": f,
        "s": s,
        "x": sol.x,
        "mu": sol.mu,
        "w": sol.w,
        "row_labels": qp.ineq_labels,
        "eq_labels": qp.eq_labels,
    });
    if let Some(r) = report {
        out["tau"] = json!(tau_bits(&r.pattern));
        out["binding_rows"] = json!(r
            .pattern
            .indices()
            .iter()
            .map(|&i| qp.ineq_labels[i].as_str())
            .collect::<Vec<_>>());
        out["weakly_active"] = json!(r
            .mismatches
            .iter()
            .filter(|m| m.weakly_active)
            .map(|m| m.label.as_str())
            .collect::<Vec<_>>());
    }
    out
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    case: PathBuf,
    /// Demand override, repeatable.
    #[arg(long = "load", value_name = "BUS=MW")]
    loads: Vec<String>,
    /// Uniform pairwise spread bound δ.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value = "solution.json")]
    out: String,
}

pub fn cmd_solve(global: &Global, a: SolveArgs) -> Result<()> {
    let mut case = read_case(global, &a.case)?;
    if let Some(delta) = a.delta {
        case.fairness.delta = Some(Delta::Uniform(delta));
    }
    if let Some(gamma) = a.gamma {
        case.fairness.gamma = gamma;
    }
    if let Some(eps) = a.epsilon {
        case.fairness.epsilon = eps;
    }
    case.validate()?;
    let d = demands(&case, &a.loads)?;
    let qp = build(&case, &d)?;
    let opts = global.solver_options();
    let sol = solve(&qp, &opts);
    let report = binding_status(&sol, &qp).ok();
    let path = output_path(global, &a.out)?;
    write_json(&path, &solution_json(&case, &d, &qp, &sol, report.as_ref()))?;
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;
    run.output(&path);
    run.write(&global.output_dir, "solve")?;

    match sol.status {
        SolveStatus::Optimal => {
            let [_, g, _, s] = split(&qp, &sol.x);
            println!("status optimal, objective {:.6}", sol.objective);
            println!("g = {g:?}");
            println!("s = {s:?}");
            Ok(())
        }
        SolveStatus::Infeasible => {
            let fixes = diagnose_infeasibility(&case, &d, &opts);
            if fixes.is_empty() {
                eprintln!("no single fairness family explains the infeasibility");
            } else {
                eprintln!("feasible once this family is dropped: {}", fixes.join(", "));
            }
            Err(status_exit(sol.status).into())
        }
        SolveStatus::MaxIterations => Err(status_exit(sol.status).into()),
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    case: PathBuf,
    /// Bus whose load is swept, repeatable.
    #[arg(long = "bus", required = true)]
    buses: Vec<i64>,
    /// First value of each swept load (default: nominal demand).
    #[arg(long, value_delimiter = ',')]
    start: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    step: f64,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = learn::dataset::DEFAULT_CAP)]
    cap: usize,
    #[arg(long, default_value = "dataset.csv")]
    out: String,
}

pub fn cmd_sweep(global: &Global, a: SweepArgs) -> Result<()> {
    let case = read_case(global, &a.case)?;
    ensure!(
        a.start.is_empty() || a.start.len() == a.buses.len(),
        "give one --start value per swept bus"
    );
    let axes = a
        .buses
        .iter()
        .enumerate()
        .map(|(i, &bus)| {
            let load = load_at_bus(&case, bus)?;
            Ok(SweepAxis {
                load,
                start: a.start.get(i).copied().unwrap_or(case.loads[load].d),
                step: a.step,
                count: a.count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SweepSpec { axes, cap: a.cap };
    let ds = learn::generate_dataset(&case, &spec, &global.solver_options())?;
    let red = learn::reduce_outputs(&ds)?;
    let path = output_path(global, &a.out)?;
    ds.save(&path)?;
    println!(
        "{} samples ({} infeasible points dropped), {} distinct patterns, {} varying constraints",
        ds.len(),
        ds.meta.infeasible,
        ds.distinct_patterns(),
        red.varying_indices.len()
    );
    for &i in &red.varying_indices {
        println!("  {}", ds.meta.row_labels[i]);
    }
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;
    run.output(&path);
    run.output(&learn::meta_path(&path));
    run.write(&global.output_dir, "sweep")
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Bce,
    Focal,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Mini-batch size; 0 trains full-batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Bce)]
    loss: LossArg,
    /// Focal-loss exponent.
    #[arg(long, default_value_t = 2.0)]
    focal_gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    validation: f64,
    #[arg(long, default_value = "model.json")]
    out: String,
}

pub fn cmd_train(global: &Global, a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)
        .with_context(|| format!("loading dataset {}", a.dataset.display()))?;
    let reduction = learn::reduce_outputs(&ds)?;
    let cfg = TrainConfig {
        hidden: a.hidden,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: (a.batch > 0).then_some(a.batch),
        loss: match a.loss {
            LossArg::Bce => learn::Loss::Bce,
            LossArg::Focal => learn::Loss::Focal {
                gamma: a.focal_gamma,
            },
        },
        seed: global.seed,
        validation_fraction: a.validation,
    };
    let t = Instant::now();
    let outcome = learn::train(&ds, &reduction, &cfg)?;
    let elapsed = t.elapsed();
    let path = output_path(global, &a.out)?;
    let predictor = TrainedPredictor {
        meta: ds.meta.clone(),
        reduction,
        model: outcome.model,
    };
    predictor.save(&path)?;
    let history = output_path(global, "loss_history.csv")?;
    let mut w = csv::Writer::from_path(&history)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in predictor.model.history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    println!(
        "{} varying outputs, held-out accuracy {:.4} per constraint, {:.4} per sample, trained in {:.2?}",
        predictor.reduction.varying_indices.len(),
        outcome.validation.per_constraint,
        outcome.validation.per_sample,
        elapsed
    );
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.dataset)?;
    run.input(&learn::meta_path(&a.dataset))?;
    run.output(&path);
    run.output(&history);
    run.write(&global.output_dir, "train")
}

fn read_predictor(case: &GridCase, path: &Path) -> Result<TrainedPredictor> {
    let p = TrainedPredictor::load(path).with_context(|| format!("loading {}", path.display()))?;
    ensure!(
        p.meta.base_loads.len() == case.n_loads() && p.meta.row_labels.len() == p.reduction.m,
        "model was trained for a case with {} loads, this case has {}",
        p.meta.base_loads.len(),
        case.n_loads()
    );
    Ok(p)
}

/// Result of predict → fast_solve → verify, with the full solve as backup.
struct FastOutcome {
    x: Vec<f64>,
    objective: f64,
    fallback: bool,
    extrapolated: bool,
    reason: Option<String>,
    pattern: BindingPattern,
}

fn fast_path(
    qp: &QuadraticProgram,
    predictor: &TrainedPredictor,
    d: &LoadVector,
    opts: &SolverOptions,
    allow_fallback: bool,
) -> Result<FastOutcome> {
    let pred = predictor.predict_loads(d.as_slice())?;
    let report = fast_solve(qp, &pred.pattern, d)?;
    if !report.needs_fallback() {
        return Ok(FastOutcome {
            x: report.x,
            objective: report.objective,
            fallback: false,
            extrapolated: pred.extrapolated,
            reason: None,
            pattern: pred.pattern,
        });
    }
    let reason = if report.singular {
        "singular KKT system".to_string()
    } else if !report.feasible {
        format!(
            "violates {} by {:.3e}",
            report.max_violation_label.as_deref().unwrap_or("?"),
            report.max_violation
        )
    } else {
        "negative dual on a binding row".to_string()
    };
    if !allow_fallback {
        let code = if report.singular { EXIT_SINGULAR } else { 1 };
        return Err(Exit {
            code,
            message: format!("predicted pattern rejected: {reason}"),
        }
        .into());
    }
    let sol = solve(qp, opts);
    if sol.status != SolveStatus::Optimal {
        return Err(status_exit(sol.status).into());
    }
    let pattern = binding_status(&sol, qp)?.pattern;
    Ok(FastOutcome {
        x: sol.x,
        objective: sol.objective,
        fallback: true,
        extrapolated: pred.extrapolated,
        reason: Some(reason),
        pattern,
    })
}

#[derive(Debug, Args)]
pub struct FastsolveArgs {
    case: PathBuf,
    /// Trained model written by `train`.
    model: PathBuf,
    #[arg(long = "load", value_name = "BUS=MW")]
    loads: Vec<String>,
    /// CSV of swept load values (a dataset file works); one result row each.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Also run the full solver and report the relative objective gap.
    #[arg(long)]
    compare: bool,
    /// Fail instead of running the full solver when the pattern is rejected.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long, default_value = "fastsolve.json")]
    out: String,
}

fn read_points(path: &Path, k: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() >= k, "row {} has fewer than {k} columns", i + 1);
        let pi = (0..k)
            .map(|c| {
                rec[c].trim().parse::<f64>().map_err(|_| Exit {
                    code: EXIT_IO,
                    message: format!("row {}, column {}: `{}` is not a number", i + 1, c + 1, &rec[c]),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(pi);
    }
    Ok(out)
}

pub fn cmd_fastsolve(global: &Global, a: FastsolveArgs) -> Result<()> {
    let case = read_case(global, &a.case)?;
    let predictor = read_predictor(&case, &a.model)?;
    let opts = global.solver_options();
    let base = demands(&case, &a.loads)?;
    let template = build(&case, &base)?;
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;
    run.input(&a.model)?;

    let Some(points) = &a.points else {
        let out = fast_path(&template, &predictor, &base, &opts, !a.no_fallback)?;
        if out.extrapolated {
            eprintln!("warning: demands lie outside the training range of the model");
        }
        let [theta, g, f, s] = split(&template, &out.x);
        let mut value = json!({
            "case": case.name,
            "objective": out.objective,
            "fallback": out.fallback,
            "fallback_reason": out.reason,
            "extrapolated": out.extrapolated,
            "loads": base.as_slice(),
            "theta": theta,
            "g": g,
            "f": f,
            "s": s,
            "tau": tau_bits(&out.pattern),
            "row_labels": template.ineq_labels,
        });
        if a.compare {
            let sol = solve(&template, &opts);
            value["full_objective"] = json!(sol.objective);
        }
        let path = output_path(global, &a.out)?;
        write_json(&path, &value)?;
        println!(
            "objective {:.6}{}",
            out.objective,
            if out.fallback { " (full-solve fallback)" } else { "" }
        );
        run.output(&path);
        return run.write(&global.output_dir, "fastsolve");
    };

    run.input(points)?;
    let rows = read_points(points, predictor.meta.sweep.len())?;
    let path = output_path(global, "fastsolve.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["point", "objective", "fallback", "extrapolated", "reason"];
    if a.compare {
        header.extend(["full_objective", "relative_gap"]);
    }
    w.write_record(&header)?;
    let mut fallbacks = 0usize;
    let mut worst_gap = 0.0f64;
    for (i, pi) in rows.iter().enumerate() {
        let mut d = base.as_slice().to_vec();
        for (axis, &v) in predictor.meta.sweep.iter().zip(pi) {
            d[axis.load] = v;
        }
        let d = LoadVector::new(d)?;
        let qp = template.with_loads(&d)?;
        let out = fast_path(&qp, &predictor, &d, &opts, !a.no_fallback)?;
        fallbacks += usize::from(out.fallback);
        let mut rec = vec![
            (i + 1).to_string(),
            out.objective.to_string(),
            out.fallback.to_string(),
            out.extrapolated.to_string(),
            out.reason.unwrap_or_default(),
        ];
        if a.compare {
            let full = solve(&qp, &opts).objective;
            let gap = (out.objective - full).abs() / full.abs().max(1.0);
            worst_gap = worst_gap.max(gap);
            rec.extend([full.to_string(), gap.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    print!(
        "{} points, fallback rate {:.4}",
        rows.len(),
        fallbacks as f64 / rows.len().max(1) as f64
    );
    if a.compare {
        print!(", largest relative objective gap {worst_gap:.3e}");
    }
    println!();
    run.output(&path);
    run.write(&global.output_dir, "fastsolve")
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    case: PathBuf,
    /// Trained model; without one the pattern of the full solve is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long = "load", value_name = "BUS=MW")]
    loads: Vec<String>,
    #[arg(long, default_value = "bench.csv")]
    out: String,
}

fn min_median_max(mut t: Vec<f64>) -> [f64; 3] {
    t.sort_by(f64::total_cmp);
    let n = t.len();
    let median = if n % 2 == 1 {
        t[n / 2]
    } else {
        0.5 * (t[n / 2 - 1] + t[n / 2])
    };
    [t[0], median, t[n - 1]]
}

pub fn cmd_bench(global: &Global, a: BenchArgs) -> Result<()> {
    ensure!(a.trials > 0, "need at least one trial");
    let case = read_case(global, &a.case)?;
    let d = demands(&case, &a.loads)?;
    let qp = build(&case, &d)?;
    let opts = global.solver_options();
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;

    let reference = solve(&qp, &opts);
    if reference.status != SolveStatus::Optimal {
        return Err(status_exit(reference.status).into());
    }
    let pattern = match &a.model {
        Some(path) => {
            run.input(path)?;
            read_predictor(&case, path)?
                .predict_loads(d.as_slice())?
                .pattern
        }
        None => binding_status(&reference, &qp)?.pattern,
    };
    let check = fast_solve(&qp, &pattern, &d)?;
    if check.needs_fallback() {
        eprintln!("warning: the pattern is rejected at these demands; timing the KKT solve anyway");
    }

    let mut full = Vec::with_capacity(a.trials);
    for _ in 0..a.trials {
        let t = Instant::now();
        std::hint::black_box(solve(&qp, &opts));
        full.push(t.elapsed().as_secs_f64());
    }
    let mut fast = Vec::with_capacity(a.trials);
    for _ in 0..a.trials {
        let t = Instant::now();
        std::hint::black_box(fast_solve(&qp, &pattern, &d)?);
        fast.push(t.elapsed().as_secs_f64());
    }
    let full = min_median_max(full);
    let fast = min_median_max(fast);
    let path = output_path(global, &a.out)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["", "minimum_s", "median_s", "maximum_s"])?;
    let row = |name: &str, v: [f64; 3]| {
        std::iter::once(name.to_string())
            .chain(v.iter().map(|x| format!("{x:.6e}")))
            .collect::<Vec<_>>()
    };
    w.write_record(row("optimization", full))?;
    w.write_record(row("linear_system", fast))?;
    let speedup = [full[0] / fast[0], full[1] / fast[1], full[2] / fast[2]];
    w.write_record(row("speedup", speedup))?;
    w.flush()?;
    println!("{:>14} {:>12} {:>12} {:>12}", "", "min (s)", "median (s)", "max (s)");
    for (name, v) in [("optimization", full), ("linear system", fast), ("speedup", speedup)] {
        println!("{name:>14} {:>12.4e} {:>12.4e} {:>12.4e}", v[0], v[1], v[2]);
    }
    run.output(&path);
    run.write(&global.output_dir, "bench")
}

#[derive(Debug, Args)]
pub struct FairnessSweepArgs {
    case: PathBuf,
    /// Comma-separated spread bounds δ.
    #[arg(long, value_delimiter = ',', required = true)]
    deltas: Vec<f64>,
    #[arg(long = "load", value_name = "BUS=MW")]
    loads: Vec<String>,
    #[arg(long, default_value = "fairness_sweep.csv")]
    out: String,
}

pub fn cmd_fairness_sweep(global: &Global, a: FairnessSweepArgs) -> Result<()> {
    ensure!(
        a.deltas.iter().all(|d| *d >= 0.0 && d.is_finite()),
        "deltas must be finite and nonnegative"
    );
    let case = read_case(global, &a.case)?;
    let d = demands(&case, &a.loads)?;
    let opts = global.solver_options();
    let columns: Vec<Option<Vec<f64>>> = a
        .deltas
        .iter()
        .map(|&delta| {
            let mut c = case.clone();
            c.fairness.delta = Some(Delta::Uniform(delta));
            let qp = build(&c, &d)?;
            let sol = solve(&qp, &opts);
            Ok(match sol.status {
                SolveStatus::Optimal => Some(sol.x[qp.layout.shed.clone()].to_vec()),
                SolveStatus::Infeasible => None,
                SolveStatus::MaxIterations => return Err(status_exit(sol.status).into()),
            })
        })
        .collect::<Result<_>>()?;
    let path = output_path(global, &a.out)?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["load".to_string(), "bus".to_string()];
    header.extend(a.deltas.iter().map(|d| format!("delta={d}")));
    w.write_record(&header)?;
    let cell = |col: &Option<Vec<f64>>, k: usize| match col {
        Some(s) => format!("{:.9}", s[k]),
        None => "infeasible".to_string(),
    };
    for (k, load) in case.loads.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string(), load.bus.to_string()];
        rec.extend(columns.iter().map(|c| cell(c, k)));
        w.write_record(&rec)?;
    }
    let mut spread = vec!["spread".to_string(), String::new()];
    spread.extend(columns.iter().map(|c| match c {
        Some(s) => {
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            format!("{:.9}", hi - lo)
        }
        None => "infeasible".to_string(),
    }));
    w.write_record(&spread)?;
    w.flush()?;
    for (delta, c) in a.deltas.iter().zip(&columns) {
        if c.is_none() {
            eprintln!("delta = {delta}: infeasible");
        }
    }
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;
    run.output(&path);
    run.write(&global.output_dir, "fairness-sweep")
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    case: PathBuf,
    /// Distribution file: `node, mean, std` or `node, s1, s2, ...`.
    #[arg(long, conflicts_with = "bounds", required_unless_present = "bounds")]
    distributions: Option<PathBuf>,
    /// Worst-case bounds file `node, d_min, d_max`; uses `d_max`.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Risk level applied to every node.
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    /// Per-node risk levels `node, alpha`; missing nodes use --alpha.
    #[arg(long)]
    alpha_file: Option<PathBuf>,
    /// Solve through this model's fast path instead of the full solver.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "risk.json")]
    out: String,
}

fn read_node_table(path: &Path, columns: usize) -> Result<Vec<(i64, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = || Exit {
            code: EXIT_IO,
            message: format!("{}:{line}: expected {} numeric columns", path.display(), columns + 1),
        };
        if rec.len() != columns + 1 {
            return Err(bad().into());
        }
        let node: i64 = rec[0].parse().map_err(|_| bad())?;
        let vals = (1..=columns)
            .map(|c| rec[c].parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((node, vals));
    }
    Ok(out)
}

pub fn cmd_risk(global: &Global, a: RiskArgs) -> Result<()> {
    let case = read_case(global, &a.case)?;
    let mut run = RunArtifact::new(global.seed);
    run.input(&a.case)?;
    let nominal = case.demands();
    let mut table = Vec::new();
    let d = if let Some(path) = &a.bounds {
        run.input(path)?;
        let mut bounds: Vec<(f64, f64)> = nominal.iter().map(|&d| (d, d)).collect();
        for (node, v) in read_node_table(path, 2)? {
            bounds[load_at_bus(&case, node)?] = (v[0], v[1]);
        }
        risk::robust_loads(&bounds)?
    } else {
        let path = a.distributions.as_ref().expect("clap requires one source");
        run.input(path)?;
        let mut alphas = vec![a.alpha; case.n_loads()];
        if let Some(af) = &a.alpha_file {
            run.input(af)?;
            for (node, v) in read_node_table(af, 1)? {
                alphas[load_at_bus(&case, node)?] = v[0];
            }
        }
        let mut dists: Vec<LoadDistribution> = nominal
            .iter()
            .map(|&d| LoadDistribution::Normal { mean: d, std: 0.0 })
            .collect();
        for (node, dist) in risk::load_distributions(path)? {
            dists[load_at_bus(&case, node)?] = dist;
        }
        for (k, (dist, &alpha)) in dists.iter().zip(&alphas).enumerate() {
            table.push(json!({
                "load": k + 1,
                "bus": case.loads[k].bus,
                "alpha": alpha,
                "var": risk::var_alpha(dist, alpha)?,
                "cvar": risk::cvar_alpha(dist, alpha)?,
            }));
        }
        risk::risk_averse_loads(&dists, &alphas)?
    };
    let qp = build(&case, &d)?;
    let opts = global.solver_options();
    let (x, objective, fallback) = match &a.model {
        Some(path) => {
            run.input(path)?;
            let predictor = read_predictor(&case, path)?;
            let out = fast_path(&qp, &predictor, &d, &opts, true)?;
            (out.x, out.objective, Some(out.fallback))
        }
        None => {
            let sol = solve(&qp, &opts);
            if sol.status != SolveStatus::Optimal {
                return Err(status_exit(sol.status).into());
            }
            (sol.x, sol.objective, None)
        }
    };
    let [_, g, _, s] = split(&qp, &x);
    let value = json!({
        "case": case.name,
        "mode": if a.bounds.is_some() { "robust" } else { "cvar" },
        "nodes": table,
        "loads": d.as_slice(),
        "objective": objective,
        "fallback": fallback,
        "g": g,
        "s": s,
    });
    let path = output_path(global, &a.out)?;
    write_json(&path, &value)?;
    println!("demands {:?}", d.as_slice());
    println!("objective {objective:.6}");
    run.output(&path);
    run.write(&global.output_dir, "risk")
}
