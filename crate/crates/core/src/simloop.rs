//! Monte-Carlo closed-loop simulation with independent Bernoulli drops.
//!
//! Each step draws `D_k = diag(d_1, ..., d_m)` with `d_i ~ Bernoulli(nu_i)`
//! independently across channels and time, then advances
//!
//! ```text
//! u_k     = K' x_k
//! x_{k+1} = A x_k + B D_k u_k + w_k,   w_k ~ N(0, Q_noise)
//! c_k     = x_k' W x_k + u_k' D_k U D_k u_k
//! ```
//!
//! Trials run in parallel, each on its own ChaCha stream seeded from
//! [`trial_seed`]. Aggregation is a sequential reduce in trial-index order,
//! so results are bit-identical regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mare::{expected_control_cost, GainMatrix, PlantModel};
use crate::matkit::{min_eig_lower_bound, sqrt_psd, Matrix, SymMatrix};
use crate::msstab::{iterate_affine, ms_spectral_radius, LyapBound, LyapOperator};

/// States whose norm exceeds this are treated as diverged.
const STATE_BLOWUP: f64 = 1e150;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub q_noise: SymMatrix,
    /// Defaults to 10% of `steps`.
    pub burn_in: Option<usize>,
}

impl SimConfig {
    pub fn new(steps: usize, trials: usize, seed: u64, q_noise: SymMatrix) -> Self {
        Self {
            steps,
            trials,
            seed,
            q_noise,
            burn_in: None,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trial count must be at least 1".into()));
        }
        if self.steps <= self.burn_in() {
            return Err(Error::InvalidConfig(format!(
                "steps ({}) must exceed burn-in ({})",
                self.steps,
                self.burn_in()
            )));
        }
        if self.q_noise.dim() != n {
            return Err(Error::DimensionMismatch {
                op: "process noise vs plant",
                left: self.q_noise.shape(),
                right: (n, n),
            });
        }
        let bound = min_eig_lower_bound(&self.q_noise)?;
        if bound < -1e-8 * self.q_noise.frobenius_norm() {
            return Err(Error::NotPositiveSemidefinite {
                what: "process noise covariance",
                bound,
            });
        }
        Ok(())
    }
}

/// Counter-based seed derivation: splitmix64 of `master + (index + 1) * gamma`.
/// Injective in `index` for a fixed master seed.
pub fn trial_seed(master: u64, trial_index: u64) -> u64 {
    let mut z = master.wrapping_add(trial_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub samples: usize,
    pub mean_cost: f64,
    /// Trace of this trial's empirical second moment.
    pub second_moment_trace: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    /// Empirical steady-state second moment `E[x x']`.
    pub covariance: SymMatrix,
    pub average_cost: f64,
    pub trials_used: usize,
    pub trials_failed: usize,
    pub samples: usize,
    pub master_seed: u64,
    pub trials: Vec<TrialRecord>,
    /// Mean-square spectral radius at the simulated gain, when computable.
    pub rho: Option<f64>,
}

struct TrialSums {
    record: TrialRecord,
    outer: Vec<f64>,
    cost: f64,
}

struct Loop<'a> {
    n: usize,
    m: usize,
    a: &'a Matrix,
    b: &'a Matrix,
    kt: Matrix,
    u: &'a SymMatrix,
    w: &'a SymMatrix,
    noise_factor: SymMatrix,
    nu: &'a [f64],
}

impl Loop<'_> {
    #[allow(clippy::needless_range_loop)]
    fn run_trial(&self, index: usize, master: u64, steps: usize, burn_in: usize) -> TrialSums {
        let (n, m) = (self.n, self.m);
        let seed = trial_seed(master, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut next = vec![0.0; n];
        let mut u = vec![0.0; m];
        let mut xi = vec![0.0; n];
        let mut outer = vec![0.0; n * n];
        let mut cost = 0.0;
        let mut samples = 0;
        let mut diverged = false;

        for step in 0..steps {
            for (j, uj) in u.iter_mut().enumerate() {
                let delivered = rng.random::<f64>() < self.nu[j];
                *uj = if delivered {
                    (0..n).map(|i| self.kt.get(j, i) * x[i]).sum()
                } else {
                    0.0
                };
            }
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if step >= burn_in {
                let mut c = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        outer[i * n + j] += x[i] * x[j];
                        c += x[i] * self.w.get(i, j) * x[j];
                    }
                }
                for i in 0..m {
                    for j in 0..m {
                        c += u[i] * self.u.get(i, j) * u[j];
                    }
                }
                cost += c;
                samples += 1;
            }
            let mut norm2 = 0.0;
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += self.a.get(i, j) * x[j] + self.noise_factor.get(i, j) * xi[j];
                }
                for j in 0..m {
                    s += self.b.get(i, j) * u[j];
                }
                next[i] = s;
                norm2 += s * s;
            }
            if !(norm2.sqrt() < STATE_BLOWUP) {
                diverged = true;
                break;
            }
            std::mem::swap(&mut x, &mut next);
        }

        let trace = if samples > 0 {
            (0..n).map(|i| outer[i * n + i]).sum::<f64>() / samples as f64
        } else {
            0.0
        };
        TrialSums {
            record: TrialRecord {
                index,
                seed,
                samples,
                mean_cost: if samples > 0 { cost / samples as f64 } else { 0.0 },
                second_moment_trace: trace,
                diverged,
            },
            outer,
            cost,
        }
    }
}

pub fn simulate(p: &PlantModel, k: &GainMatrix, cfg: &SimConfig) -> Result<SimResult> {
    k.check_shape(p)?;
    let n = p.n();
    cfg.validate(n)?;
    let sim = Loop {
        n,
        m: p.m(),
        a: p.a(),
        b: p.b(),
        kt: k.as_matrix().transpose(),
        u: p.u(),
        w: p.w(),
        noise_factor: sqrt_psd(&cfg.q_noise)?,
        nu: p.channels().nu_bar(),
    };
    let burn_in = cfg.burn_in();
    let per_trial: Vec<TrialSums> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| sim.run_trial(i, cfg.seed, cfg.steps, burn_in))
        .collect();

    let mut outer = vec![0.0; n * n];
    let mut cost = 0.0;
    let mut samples = 0;
    let mut used = 0;
    let mut records = Vec::with_capacity(per_trial.len());
    for t in per_trial {
        if !t.record.diverged {
            for (acc, v) in outer.iter_mut().zip(&t.outer) {
                *acc += v;
            }
            cost += t.cost;
            samples += t.record.samples;
            used += 1;
        }
        records.push(t.record);
    }
    let denom = (samples as f64).max(1.0);
    let covariance = SymMatrix::from_matrix(Matrix::new(n, n, outer.iter().map(|v| v / denom).collect())?)?;
    let rho = LyapOperator::new(p, k)
        .and_then(|op| ms_spectral_radius(&op))
        .ok()
        .map(|r| r.rho);
    Ok(SimResult {
        covariance,
        average_cost: cost / denom,
        trials_used: used,
        trials_failed: cfg.trials - used,
        samples,
        master_seed: cfg.seed,
        trials: records,
        rho,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceFixedPoint {
    pub sigma: SymMatrix,
    /// `tr((W + K [sum_I eta_I^2 N_I U N_I] K') Sigma)`.
    pub expected_cost: f64,
    pub iterations: usize,
}

/// Fixed point of `Sigma = sum_I eta_I^2 G_I Sigma G_I' + Q` with
/// `G_I = A + B N_I K'`, iterated from zero to relative residual `1e-12`.
pub fn covariance_fixed_point(p: &PlantModel, k: &GainMatrix, q_noise: &SymMatrix) -> Result<CovarianceFixedPoint> {
    let op = LyapOperator::new(p, k)?;
    if q_noise.dim() != p.n() {
        return Err(Error::DimensionMismatch {
            op: "process noise vs plant",
            left: q_noise.shape(),
            right: (p.n(), p.n()),
        });
    }
    let bound = 1e12 * q_noise.frobenius_norm().max(1.0);
    match iterate_affine(|s| op.apply_adjoint(s), q_noise, 1_000_000, bound, 1e-12) {
        LyapBound::Bounded { limit, iterations } => {
            let weight = p.w() + &expected_control_cost(p, k);
            let expected_cost = (weight.as_matrix() * limit.as_matrix()).trace();
            Ok(CovarianceFixedPoint {
                sigma: limit,
                expected_cost,
                iterations,
            })
        }
        LyapBound::Unbounded { .. } => Err(Error::Unbounded),
        LyapBound::Inconclusive { iterations, residual } => Err(Error::Inconclusive { iterations, residual }),
    }
}
