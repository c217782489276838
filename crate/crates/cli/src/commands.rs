use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wbary::bench::{bench_scaling, least_squares_slope, BenchOptions};
use wbary::datagen::{case1_data, case2_data, case3_data, gaussian_pair_data, Dataset};
use wbary::free_support::{solve_free, FreeSupportOptions, InnerSolver};
use wbary::io::{self, InstanceFile, SolutionFile, DEFAULT_P};
use wbary::{lp_oracle, normalized_objective, BarycenterInstance, DiscreteDistribution, Error, Mat, Method, SolveReport};

use crate::runner::{self, MethodSpec};
use crate::{BenchArgs, Case, CompareArgs, FreeSupportArgs, GenParams, GenerateArgs, Inner, SolveArgs, TableFormat};

fn status(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(crate::EXIT_CAP)
    }
}

/// Pretty JSON to `path`, or to standard output.
fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => io::write_json(p, value).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn dataset(params: &GenParams, seed: u64) -> Result<(Dataset, Option<Vec<f64>>)> {
    let p = params;
    Ok(match p.case {
        Case::One => (case1_data(p.n, p.m, p.m_prime, p.d, seed)?, None),
        Case::Two => (case2_data(p.n, p.m, p.m_prime, p.sr, p.d, seed)?, None),
        Case::Three => (case3_data(p.n, p.m, p.d, seed)?, None),
        Case::GaussPair => {
            let (data, truth) = gaussian_pair_data(p.m)?;
            (data, Some(truth))
        }
    })
}

pub fn generate(args: &GenerateArgs) -> Result<ExitCode> {
    let (data, truth) = dataset(&args.params, args.seed)?;
    let file = if args.precomputed {
        InstanceFile::from_instance(&data.instance()?)
    } else {
        InstanceFile::from_dataset(&data)
    };
    match (&args.truth, truth) {
        (Some(path), Some(w)) => io::write_json(path, &w)?,
        (Some(_), None) => bail!("--truth is only available for --case gauss-pair"),
        (None, _) => {}
    }
    emit_json(args.out.as_deref(), &file)?;
    Ok(ExitCode::SUCCESS)
}

fn summary(label: &str, rep: &SolveReport) {
    eprintln!(
        "{label}: objective {:.10e}, eta_feas {:.3e}, {} iterations, {:.3} s, {}",
        rep.objective,
        rep.eta_feas,
        rep.iterations,
        rep.wall_time,
        if rep.converged { "converged" } else { "stopped at the iteration cap" }
    );
}

pub fn solve(args: &SolveArgs) -> Result<ExitCode> {
    runner::check_flags(args.method, &args.flags)?;
    let inst = io::read_instance(&args.instance, args.seed)?;
    log::info!("instance: N = {}, m = {}, sizes {:?}", inst.n(), inst.m(), inst.sizes());
    let spec = MethodSpec { method: args.method, epsilon: None };
    let (sol, rep) = runner::run(&inst, spec, &args.flags)?;
    let file = SolutionFile::new(&inst, &sol, &rep, args.emit_plans)?;
    match &args.out {
        Some(p) => io::write_solution(p, &file).with_context(|| format!("writing {}", p.display()))?,
        None => {
            file.validate()?;
            emit_json(None, &file)?;
        }
    }
    if let Some(p) = &args.report {
        io::write_json(p, &rep)?;
    }
    if let Some(p) = &args.trace {
        io::write_trace(p, &rep.trace)?;
    }
    for note in &rep.notes {
        log::info!("{note}");
    }
    summary(args.method.as_str(), &rep);
    Ok(status(rep.converged))
}

/// Objective the normalized objectives are measured against.
struct Reference {
    value: f64,
    exact: bool,
}

fn oracle_reference(inst: &BarycenterInstance) -> Result<Option<Reference>> {
    match lp_oracle::solve(inst) {
        Ok((_, rep)) => Ok(Some(Reference { value: rep.objective, exact: true })),
        Err(Error::TooLarge { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Default, Clone)]
struct Tally {
    nobj: f64,
    eta_feas: f64,
    iterations: f64,
    seconds: f64,
    converged: usize,
    trials: usize,
    best_found: bool,
}

#[derive(Debug, Serialize)]
struct CompareRow {
    method: String,
    trials: usize,
    normalized_obj: f64,
    eta_feas: f64,
    iterations: f64,
    seconds: f64,
    converged: usize,
    reference: &'static str,
}

/// Reports in method order; `None` for an oracle run refused by the size guard.
fn run_methods(inst: &BarycenterInstance, args: &CompareArgs) -> Result<Vec<Option<SolveReport>>> {
    let one = |spec: MethodSpec| match runner::run(inst, spec, &args.flags) {
        Ok((_, rep)) => Ok(Some(rep)),
        Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::TooLarge { .. })) => Ok(None),
        Err(e) => Err(e.context(format!("method {spec}"))),
    };
    if args.parallel_methods {
        std::thread::scope(|s| {
            let handles: Vec<_> = args.methods.iter().map(|&spec| s.spawn(move || one(spec))).collect();
            handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
        })
    } else {
        args.methods.iter().map(|&spec| one(spec)).collect()
    }
}

fn best_found(reports: &[Option<SolveReport>]) -> Reference {
    log::warn!("instance too large for the oracle; normalizing by the best objective found");
    let best = reports.iter().flatten().map(|r| r.objective).fold(f64::INFINITY, f64::min);
    Reference { value: best, exact: false }
}

pub fn compare(args: &CompareArgs) -> Result<ExitCode> {
    if args.methods.len() < 2 {
        bail!("compare needs at least two methods");
    }
    if args.trials == 0 {
        bail!("--trials must be positive");
    }
    if args.instance.is_some() && args.trials > 1 {
        bail!("--trials > 1 needs generated instances, not --instance");
    }
    let mut tallies = vec![Tally::default(); args.methods.len()];
    for k in 0..args.trials {
        let seed = args.seed + k as u64;
        let inst = match &args.instance {
            Some(p) => io::read_instance(p, seed)?,
            None => dataset(&args.params, seed)?.0.instance()?,
        };
        let started = Instant::now();
        let reports = run_methods(&inst, args)?;
        log::info!("trial {} (seed {seed}) took {:.2} s", k + 1, started.elapsed().as_secs_f64());
        let from_run = args
            .methods
            .iter()
            .zip(&reports)
            .find(|(s, _)| s.method == Method::Oracle)
            .map(|(_, r)| r.as_ref().map(|r| Reference { value: r.objective, exact: true }));
        let reference = match from_run {
            Some(Some(r)) => r,
            Some(None) => best_found(&reports),
            None => match oracle_reference(&inst)? {
                Some(r) => r,
                None => best_found(&reports),
            },
        };
        for (t, rep) in tallies.iter_mut().zip(&reports) {
            let Some(rep) = rep else { continue };
            t.nobj += normalized_objective(rep.objective, reference.value);
            t.eta_feas += rep.eta_feas;
            t.iterations += rep.iterations as f64;
            t.seconds += rep.wall_time;
            t.converged += usize::from(rep.converged);
            t.trials += 1;
            t.best_found |= !reference.exact;
        }
    }
    let rows: Vec<CompareRow> = args
        .methods
        .iter()
        .zip(&tallies)
        .map(|(spec, t)| {
            let k = t.trials as f64;
            CompareRow {
                method: spec.to_string(),
                trials: t.trials,
                normalized_obj: t.nobj / k,
                eta_feas: t.eta_feas / k,
                iterations: t.iterations / k,
                seconds: t.seconds / k,
                converged: t.converged,
                reference: if t.best_found { "best-found" } else { "oracle" },
            }
        })
        .collect();
    let out = output(args.out.as_deref())?;
    match args.format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        TableFormat::Markdown => write_markdown(out, &rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn write_markdown(mut out: impl Write, rows: &[CompareRow]) -> Result<()> {
    writeln!(out, "| method | normalized obj | feasibility | iter | time (s) | converged | reference |")?;
    writeln!(out, "|---|---|---|---|---|---|---|")?;
    for r in rows {
        writeln!(
            out,
            "| {} | {:.2e} | {:.2e} | {:.0} | {:.3} | {}/{} | {} |",
            r.method, r.normalized_obj, r.eta_feas, r.iterations, r.seconds, r.converged, r.trials, r.reference
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FreeSupportOutput<'a> {
    barycenter: &'a DiscreteDistribution,
    objectives: &'a [f64],
    report: &'a SolveReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    plans: Option<&'a [Mat]>,
}

pub fn free_support(args: &FreeSupportArgs) -> Result<ExitCode> {
    let file = io::read_instance_file(&args.instance)?;
    if !file.has_distributions() {
        bail!("free-support needs an instance with \"distributions\"");
    }
    let p = file.p.unwrap_or(DEFAULT_P);
    if p != 2.0 {
        bail!("free-support updates supports only for p = 2, the file has p = {p}");
    }
    let dists = file.validated_distributions()?;
    let inner = match args.inner {
        Inner::Sgs => InnerSolver::Sgs,
        Inner::Badmm => InnerSolver::Badmm,
        Inner::Ibp => InnerSolver::Ibp { epsilon: args.epsilon },
        Inner::Oracle => InnerSolver::Oracle,
    };
    let opts = FreeSupportOptions {
        m: args.m,
        inner,
        inner_max_iter: args.inner_max_iter,
        tol: args.tol,
        max_outer: args.max_iter,
        warm_start: !args.no_warm_start,
        seed: args.seed,
        threads: args.threads,
    };
    let res = solve_free(&dists, file.gammas.clone(), &opts)?;
    let out = FreeSupportOutput {
        barycenter: &res.barycenter,
        objectives: &res.objectives,
        report: &res.report,
        plans: args.emit_plans.then_some(res.plans.as_slice()),
    };
    emit_json(args.out.as_deref(), &out)?;
    if let Some(p) = &args.trace {
        io::write_trace(p, &res.report.trace)?;
    }
    summary("free-support", &res.report);
    Ok(status(res.report.converged))
}

pub fn bench(args: &BenchArgs) -> Result<ExitCode> {
    let opts = BenchOptions {
        m: args.m,
        m_prime: args.m_prime,
        d: args.d,
        seed: args.seed,
        iterations: args.iterations,
        repeats: args.repeats,
        threads: args.threads,
    };
    let points = bench_scaling(&args.ns, &opts)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    for p in &points {
        w.serialize(p)?;
    }
    w.flush()?;
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.per_iteration).collect();
    match least_squares_slope(&xs, &ys) {
        Some(s) => eprintln!("slope: {s:.3e} s per iteration per distribution"),
        None => eprintln!("slope: undefined for a single N"),
    }
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        if points.len() > 1 {
            eprintln!(
                "time per iteration, N = {} vs N = {}: ratio {:.2}",
                last.n,
                first.n,
                last.per_iteration / first.per_iteration
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
