use std::path::Path;

use anyhow::{anyhow, bail, Context as _, Result};
use mare_core::lmi::{certify_via_mare, Certification, LmiCertificate, LmiOptions};
use mare_core::mare::{fixed_point_residual, optimal_gain, solve_mare};
use mare_core::msstab::{ms_spectral_radius, LyapOperator};
use mare_core::simloop::{covariance_fixed_point, simulate as run_simulation, SimConfig};
use mare_core::sweep::{sweep_boundary, SweepConfig};
use mare_core::{Error, GainMatrix, MareSolution, PlantModel, SolverConfig, SymMatrix, Verdict};
use serde_json::{json, Value};

use crate::output::{csv_matrix, csv_writer, human_matrix, num, print_json, short, write_json_file, Format};
use crate::problem::{self, Problem};
use crate::{GainSource, SolverArgs};

/// Channel count above which `--force-m` is required.
pub const MAX_CHANNELS_UNFORCED: usize = 12;

pub struct Context {
    pub format: Format,
    pub force_m: bool,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Diverged, infeasible, or unstable: exit code 2.
    Negative,
}

fn load(ctx: &Context, path: &Path) -> Result<Problem> {
    let p = problem::load(path)?;
    let m = p.plant.m();
    if m > MAX_CHANNELS_UNFORCED && !ctx.force_m {
        bail!(
            "{m} channels means {} delivery subsets per operator application; pass --force-m to proceed",
            1u64 << m
        );
    }
    Ok(p)
}

fn solver_config(p: &Problem, args: &SolverArgs) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = args.tol.or(p.solver.tol) {
        cfg.tol = t;
    }
    if let Some(k) = args.max_iter.or(p.solver.max_iter) {
        cfg.max_iter = k;
    }
    if let Some(s0) = args.s0.as_ref().or(p.solver.s0.as_ref()) {
        cfg.initial = s0.resolve(p.plant.n())?;
    }
    cfg.validate(&p.plant)?;
    Ok(cfg)
}

fn solution_json(sol: &MareSolution) -> Value {
    json!({
        "verdict": sol.verdict,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "peak_norm": sol.peak_norm,
        "S": sol.s,
        "K": sol.gain,
    })
}

pub fn solve(ctx: &Context, path: &Path, args: &SolverArgs, out: Option<&Path>) -> Result<Status> {
    let p = load(ctx, path)?;
    let cfg = solver_config(&p, args)?;
    let sol = solve_mare(&p.plant, &cfg)?;
    if let Some(out) = out {
        write_json_file(out, &sol)?;
    }
    match ctx.format {
        Format::Json => print_json(&solution_json(&sol))?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["quantity", "row", "col", "value"])?;
            w.write_record(["verdict", "", "", &sol.verdict.to_string()])?;
            w.write_record(["iterations", "", "", &sol.iterations.to_string()])?;
            w.write_record(["residual", "", "", &num(sol.residual)])?;
            csv_matrix(&mut w, "S", &sol.s)?;
            if let Some(k) = &sol.gain {
                csv_matrix(&mut w, "K", k.as_matrix())?;
            }
            w.flush()?;
        }
        Format::Human => {
            println!("verdict     {}", sol.verdict);
            println!("iterations  {}", sol.iterations);
            println!("residual    {}", short(sol.residual));
            print!(
                "{}",
                human_matrix(
                    if sol.is_converged() {
                        "S"
                    } else {
                        "S (last finite iterate)"
                    },
                    &sol.s
                )
            );
            match &sol.gain {
                Some(k) => print!("{}", human_matrix("K", k.as_matrix())),
                None => println!("K unavailable: the iteration did not converge"),
            }
        }
    }
    Ok(if sol.is_converged() {
        Status::Success
    } else {
        Status::Negative
    })
}

/// Gain from a JSON file holding either a matrix or a solution dump.
fn gain_from_file(p: &PlantModel, path: &Path) -> Result<GainMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("invalid gain file {}", path.display()))?;
    let k = match &v {
        Value::Object(obj) => match obj.get("K") {
            Some(Value::Null) => bail!("{}: solution has no gain (did not converge)", path.display()),
            Some(k) => problem::matrix(k, "K")?,
            None => bail!("{}: expected a matrix or an object with key K", path.display()),
        },
        other => problem::matrix(other, "K")?,
    };
    if k.shape() != (p.n(), p.m()) {
        bail!(
            "K: expected {}x{} (states x channels), got {}x{}",
            p.n(),
            p.m(),
            k.rows(),
            k.cols()
        );
    }
    Ok(GainMatrix::new(k)?)
}

/// Resolves the gain, or returns the non-converged solution that prevented it.
fn resolve_gain(
    p: &Problem,
    source: &GainSource,
    args: &SolverArgs,
) -> Result<std::result::Result<GainMatrix, MareSolution>> {
    match source {
        GainSource::File(path) => Ok(Ok(gain_from_file(&p.plant, path)?)),
        GainSource::FromSolve => {
            let sol = solve_mare(&p.plant, &solver_config(p, args)?)?;
            Ok(match sol.gain.clone() {
                Some(k) => Ok(k),
                None => Err(sol),
            })
        }
    }
}

fn report_no_gain(sol: &MareSolution) {
    eprintln!(
        "no gain: the MARE iteration {} after {} iterations",
        sol.verdict, sol.iterations
    );
}

pub fn stability(ctx: &Context, path: &Path, source: &GainSource, args: &SolverArgs) -> Result<Status> {
    let p = load(ctx, path)?;
    let k = match resolve_gain(&p, source, args)? {
        Ok(k) => k,
        Err(sol) => {
            report_no_gain(&sol);
            return Ok(Status::Negative);
        }
    };
    let r = ms_spectral_radius(&LyapOperator::new(&p.plant, &k)?)?;
    let verdict = if r.is_stable() {
        "mean-square stable"
    } else {
        "not mean-square stable"
    };
    match ctx.format {
        Format::Json => print_json(&json!({
            "rho": r.rho,
            "stable": r.is_stable(),
            "residual": r.residual,
            "iterations": r.iterations,
            "restarted": r.restarted,
            "K": k,
        }))?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["rho", "stable", "residual", "iterations"])?;
            w.write_record([
                num(r.rho),
                r.is_stable().to_string(),
                num(r.residual),
                r.iterations.to_string(),
            ])?;
            w.flush()?;
        }
        Format::Human => {
            println!("rho = {}, {verdict}", short(r.rho));
            println!(
                "power iteration residual {} after {} iterations",
                short(r.residual),
                r.iterations
            );
        }
    }
    Ok(if r.is_stable() {
        Status::Success
    } else {
        Status::Negative
    })
}

pub fn lmi_check(
    ctx: &Context,
    path: &Path,
    delta: f64,
    regularize: bool,
    args: &SolverArgs,
    out: Option<&Path>,
) -> Result<Status> {
    let p = load(ctx, path)?;
    if delta == 0.0 {
        eprintln!(
            "warning: delta = 0 leaves no strictness margin; the inflated fixed point then meets \
             the inequality with equality and the strict LMI check is expected to fail"
        );
    }
    let cfg = solver_config(&p, args)?;
    let outcome = certify_via_mare(&p.plant, &cfg, delta, LmiOptions { regularize }).map_err(|e| match e {
        Error::SingularCostWeight => anyhow!("{e}; pass --regularize"),
        other => other.into(),
    })?;
    let (status, label, cert, sol) = match &outcome {
        Certification::Certified { solution, certificate } => {
            let label = if certificate.feasible { "feasible" } else { "infeasible" };
            (label == "feasible", label, Some(certificate), solution)
        }
        Certification::NoCertificate { solution } => (false, "infeasible-by-divergence", None, solution),
    };
    if let (Some(out), Some(cert)) = (out, cert) {
        write_json_file(out, cert)?;
    }
    match ctx.format {
        Format::Json => print_json(&json!({
            "status": label,
            "delta": delta,
            "min_pivot": cert.map(|c| c.min_pivot),
            "w_regularization": cert.and_then(|c| c.w_regularization),
            "solver_verdict": sol.verdict,
            "iterations": sol.iterations,
        }))?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record([
                "status",
                "delta",
                "min_pivot",
                "w_regularization",
                "solver_verdict",
                "iterations",
            ])?;
            w.write_record([
                label.to_string(),
                num(delta),
                cert.map(|c| num(c.min_pivot)).unwrap_or_default(),
                cert.and_then(|c| c.w_regularization).map(num).unwrap_or_default(),
                sol.verdict.to_string(),
                sol.iterations.to_string(),
            ])?;
            w.flush()?;
        }
        Format::Human => match cert {
            Some(c) => {
                println!("{label} (delta = {}, min pivot = {})", short(delta), short(c.min_pivot));
                if let Some(eps) = c.w_regularization {
                    println!("W regularized by {} * I", short(eps));
                }
            }
            None => println!(
                "{label}: the MARE iteration {} after {} iterations, so there is no candidate",
                sol.verdict, sol.iterations
            ),
        },
    }
    Ok(if status { Status::Success } else { Status::Negative })
}

fn parse_ray(ray: &str, m: usize) -> Result<Vec<f64>> {
    if ray == "uniform" {
        return Ok(vec![1.0; m]);
    }
    let dir = ray
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("--ray: cannot parse {s:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if dir.len() != m {
        bail!("--ray: expected {m} entries, got {}", dir.len());
    }
    Ok(dir)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

pub fn sweep(ctx: &Context, path: &Path, ray: &str, lo: f64, hi: f64, tol: f64, args: &SolverArgs) -> Result<Status> {
    let p = load(ctx, path)?;
    let direction = parse_ray(ray, p.plant.m())?;
    let mut cfg = SweepConfig::new(lo, hi);
    cfg.tol = tol;
    if let Some(k) = args.max_iter.or(p.solver.max_iter) {
        cfg.solver.max_iter = k;
    }
    if let Some(t) = p.solver.tol {
        cfg.solver.tol = t;
    }
    if let Some(s0) = args.s0.as_ref().or(p.solver.s0.as_ref()) {
        cfg.solver.initial = s0.resolve(p.plant.n())?;
    }
    let out = sweep_boundary(&p.plant, &direction, &cfg)?;
    if ctx.format == Format::Json {
        print_json(&json!({
            "boundary": out.boundary,
            "converged_t": out.converged_t,
            "failed_t": out.failed_t,
            "rho_at_boundary": out.rho_at_boundary,
            "direction": direction,
            "probes": out.probes,
        }))?;
        return Ok(Status::Success);
    }
    let mut w = csv_writer();
    w.write_record([
        "kind",
        "t",
        "nu_bar",
        "verdict",
        "iterations",
        "converged_t",
        "failed_t",
        "rho",
    ])?;
    for pr in &out.probes {
        w.write_record([
            "probe".to_string(),
            num(pr.t),
            join(&pr.nu_bar),
            pr.verdict.to_string(),
            pr.iterations.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    let nu: Vec<f64> = direction.iter().map(|d| d * out.boundary).collect();
    w.write_record([
        "boundary".to_string(),
        num(out.boundary),
        join(&nu),
        String::new(),
        String::new(),
        num(out.converged_t),
        num(out.failed_t),
        out.rho_at_boundary.map(num).unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(Status::Success)
}

pub struct SimArgs {
    pub steps: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub qnoise: Option<f64>,
}

pub fn simulate(ctx: &Context, path: &Path, sim: SimArgs, source: &GainSource, args: &SolverArgs) -> Result<Status> {
    let p = load(ctx, path)?;
    let n = p.plant.n();
    let k = match resolve_gain(&p, source, args)? {
        Ok(k) => k,
        Err(sol) => {
            report_no_gain(&sol);
            return Ok(Status::Negative);
        }
    };
    let q = match (sim.qnoise, &p.sim.q_noise) {
        (Some(c), _) => SymMatrix::identity(n).scale(c),
        (None, Some(q)) => q.clone(),
        (None, None) => SymMatrix::identity(n),
    };
    let cfg = SimConfig::new(
        sim.steps.or(p.sim.steps).unwrap_or(100_000),
        sim.trials.or(p.sim.trials).unwrap_or(8),
        sim.seed.or(p.sim.seed).unwrap_or(0),
        q.clone(),
    );
    let res = run_simulation(&p.plant, &k, &cfg)?;
    let oracle = match covariance_fixed_point(&p.plant, &k, &q) {
        Ok(fp) => Some(fp),
        Err(Error::Unbounded) | Err(Error::Inconclusive { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let stable = oracle.is_some();
    if !stable {
        eprintln!("warning: the closed loop is not mean-square stable; no analytic oracle");
    }

    if ctx.format == Format::Json {
        print_json(&json!({
            "trials": res.trials,
            "aggregate": {
                "trials_used": res.trials_used,
                "trials_failed": res.trials_failed,
                "samples": res.samples,
                "master_seed": res.master_seed,
                "average_cost": res.average_cost,
                "covariance": res.covariance,
                "rho": res.rho,
            },
            "oracle": oracle.as_ref().map(|fp| json!({
                "covariance": fp.sigma,
                "expected_cost": fp.expected_cost,
            })),
        }))?;
        return Ok(if stable { Status::Success } else { Status::Negative });
    }
    let mut w = csv_writer();
    w.write_record([
        "kind",
        "trial",
        "seed",
        "samples",
        "mean_cost",
        "second_moment_trace",
        "diverged",
        "oracle_cost",
        "oracle_trace",
        "rho",
    ])?;
    for t in &res.trials {
        w.write_record([
            "trial".to_string(),
            t.index.to_string(),
            t.seed.to_string(),
            t.samples.to_string(),
            num(t.mean_cost),
            num(t.second_moment_trace),
            t.diverged.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.write_record([
        "aggregate".to_string(),
        res.trials_used.to_string(),
        res.master_seed.to_string(),
        res.samples.to_string(),
        num(res.average_cost),
        num(res.covariance.trace()),
        res.trials_failed.to_string(),
        oracle.as_ref().map(|fp| num(fp.expected_cost)).unwrap_or_default(),
        oracle.as_ref().map(|fp| num(fp.sigma.trace())).unwrap_or_default(),
        res.rho.map(num).unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(if stable { Status::Success } else { Status::Negative })
}

pub fn verify(ctx: &Context, path: &Path, dump: &Path) -> Result<Status> {
    let p = load(ctx, path)?;
    let text = std::fs::read_to_string(dump).with_context(|| format!("cannot read {}", dump.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("invalid dump {}", dump.display()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| anyhow!("{}: expected a JSON object", dump.display()))?;
    let (ok, lines) = if obj.contains_key("Y") {
        let cert: LmiCertificate = serde_json::from_value(v).context("certificate")?;
        let check = cert.recheck(&p.plant)?;
        let identical = check.feasible == cert.feasible && check.min_pivot.to_bits() == cert.min_pivot.to_bits();
        (
            identical && check.feasible,
            vec![
                format!("kind          certificate"),
                format!("feasible      {} (stored {})", check.feasible, cert.feasible),
                format!(
                    "min pivot     {} (stored {})",
                    num(check.min_pivot),
                    num(cert.min_pivot)
                ),
                format!("identical     {identical}"),
            ],
        )
    } else if obj.contains_key("S") {
        let sol: MareSolution = serde_json::from_value(v).context("solution")?;
        if sol.verdict != Verdict::Converged {
            bail!("{}: stored solution has verdict {}", dump.display(), sol.verdict);
        }
        let stored = sol
            .gain
            .as_ref()
            .ok_or_else(|| anyhow!("{}: converged solution without K", dump.display()))?;
        let k = optimal_gain(&p.plant, &sol.s)?;
        let identical = k
            .as_matrix()
            .as_slice()
            .iter()
            .zip(stored.as_matrix().as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let residual = fixed_point_residual(&p.plant, &sol.s)?;
        // one more step contracts, so the residual cannot grow past the stored one
        let fixed = residual <= 10.0 * sol.residual.max(f64::EPSILON);
        (
            identical && fixed,
            vec![
                format!("kind          solution"),
                format!("residual      {} (stored step {})", num(residual), num(sol.residual)),
                format!("gain matches  {identical}"),
            ],
        )
    } else {
        bail!(
            "{}: neither a solution (key S) nor a certificate (key Y)",
            dump.display()
        );
    };
    match ctx.format {
        Format::Json => print_json(&json!({ "verified": ok, "details": lines }))?,
        _ => {
            for l in &lines {
                println!("{l}");
            }
            println!("{}", if ok { "verified" } else { "verification failed" });
        }
    }
    Ok(if ok { Status::Success } else { Status::Negative })
}
