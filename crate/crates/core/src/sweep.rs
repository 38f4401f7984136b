//! Bisection of the MARE convergence boundary along `nu_bar(t) = t * direction`.
//!
//! The predicate is the solver verdict (converged or not), not the
//! spectral radius; the radius at the converged side of the final bracket
//! is reported for cross-checking.

use serde::{Deserialize, Serialize};

use crate::channels::ChannelSpec;
use crate::error::{Error, Result};
use crate::mare::{solve_mare, PlantModel, SolverConfig, Verdict};
use crate::msstab::{ms_spectral_radius, LyapOperator};

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub lo: f64,
    pub hi: f64,
    /// Final bracket width.
    pub tol: f64,
    pub solver: SolverConfig,
}

impl SweepConfig {
    /// Bracket `[lo, hi]`, width tolerance `1e-3`, and a solver allowed
    /// `100_000` iterations so that probes close to the boundary still
    /// reach a verdict.
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            tol: 1e-3,
            solver: SolverConfig {
                max_iter: 100_000,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    pub nu_bar: Vec<f64>,
    pub verdict: Verdict,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    /// Midpoint of the final bracket.
    pub boundary: f64,
    /// Final bracket, converged side first.
    pub converged_t: f64,
    pub failed_t: f64,
    pub probes: Vec<Probe>,
    pub rho_at_boundary: Option<f64>,
}

fn probe(p: &PlantModel, direction: &[f64], t: f64, solver: &SolverConfig) -> Result<(Probe, PlantModel)> {
    let nu_bar: Vec<f64> = direction.iter().map(|d| t * d).collect();
    let model = p.with_channels(ChannelSpec::new(nu_bar.clone())?)?;
    let sol = solve_mare(&model, solver)?;
    Ok((
        Probe {
            t,
            nu_bar,
            verdict: sol.verdict,
            iterations: sol.iterations,
        },
        model,
    ))
}

pub fn sweep_boundary(p: &PlantModel, direction: &[f64], cfg: &SweepConfig) -> Result<SweepOutcome> {
    if direction.len() != p.m() {
        return Err(Error::DimensionMismatch {
            op: "sweep direction vs channels",
            left: (direction.len(), 1),
            right: (p.m(), 1),
        });
    }
    if let Some(i) = direction.iter().position(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "direction entry {} is {}; entries must lie in (0, 1]",
            i + 1,
            direction[i]
        )));
    }
    if !(cfg.lo < cfg.hi) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need lo < hi and tol > 0 (lo={}, hi={}, tol={})",
            cfg.lo, cfg.hi, cfg.tol
        )));
    }

    let mut probes = Vec::new();
    let (lo_probe, _) = probe(p, direction, cfg.lo, &cfg.solver)?;
    let (hi_probe, _) = probe(p, direction, cfg.hi, &cfg.solver)?;
    let lo_ok = lo_probe.verdict == Verdict::Converged;
    let hi_ok = hi_probe.verdict == Verdict::Converged;
    probes.push(lo_probe);
    probes.push(hi_probe);
    if lo_ok == hi_ok {
        return Err(Error::NoCrossing(
            if lo_ok { "converged" } else { "not converged" }.into(),
        ));
    }

    let (mut good, mut bad) = if lo_ok { (cfg.lo, cfg.hi) } else { (cfg.hi, cfg.lo) };
    while (good - bad).abs() > cfg.tol {
        let mid = 0.5 * (good + bad);
        let (pr, _) = probe(p, direction, mid, &cfg.solver)?;
        if pr.verdict == Verdict::Converged {
            good = mid;
        } else {
            bad = mid;
        }
        probes.push(pr);
    }

    let rho_at_boundary = {
        let nu: Vec<f64> = direction.iter().map(|d| good * d).collect();
        let model = p.with_channels(ChannelSpec::new(nu)?)?;
        let sol = solve_mare(&model, &cfg.solver)?;
        sol.gain
            .and_then(|k| LyapOperator::new(&model, &k).ok())
            .and_then(|op| ms_spectral_radius(&op).ok())
            .map(|r| r.rho)
    };

    Ok(SweepOutcome {
        boundary: 0.5 * (good + bad),
        converged_t: good,
        failed_t: bad,
        probes,
        rho_at_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matkit::{Matrix, SymMatrix};

    fn scalar(a: f64) -> PlantModel {
        let one = |v: f64| Matrix::from_rows(&[[v]]).unwrap();
        PlantModel::new(
            one(a),
            one(1.0),
            SymMatrix::zeros(1),
            SymMatrix::identity(1),
            ChannelSpec::new(vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    fn from_identity(mut cfg: SweepConfig) -> SweepConfig {
        cfg.solver.initial = Some(SymMatrix::identity(1));
        cfg
    }

    #[test]
    fn scalar_boundary_matches_critical_probability() {
        let out = sweep_boundary(&scalar(2.0), &[1.0], &from_identity(SweepConfig::new(0.5, 1.0))).unwrap();
        assert!((out.boundary - 0.75).abs() <= 1e-3, "{}", out.boundary);
        assert!(out.converged_t > out.failed_t);
        let rho = out.rho_at_boundary.unwrap();
        assert!(rho < 1.0 && rho > 0.9, "{rho}");
    }

    #[test]
    fn stable_open_loop_has_no_crossing() {
        let err = sweep_boundary(&scalar(0.5), &[1.0], &from_identity(SweepConfig::new(0.05, 1.0))).unwrap_err();
        assert_eq!(err, Error::NoCrossing("converged".into()));
    }

    #[test]
    fn invalid_inputs() {
        let p = scalar(2.0);
        assert!(sweep_boundary(&p, &[1.5], &SweepConfig::new(0.5, 1.0)).is_err());
        assert!(sweep_boundary(&p, &[1.0], &SweepConfig::new(1.0, 0.5)).is_err());
        assert!(sweep_boundary(&p, &[1.0, 1.0], &SweepConfig::new(0.5, 1.0)).is_err());
    }
}
