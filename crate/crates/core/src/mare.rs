//! The control-side modified algebraic Riccati equation.
//!
//! For a plant `(A, B)` with cost weights `(U, W)` and `m` actuation
//! channels that deliver independently with probabilities `nu_bar`:
//!
//! ```text
//! M(X)   = sum_I eta_I^2 N_I (U + B'XB) N_I
//! Pi(S)  = A'SA + W - A'SB Nbar M(S)^-1 Nbar B'SA
//! phi(K, X) = sum_I eta_I^2 (F_I X F_I' + V_I)
//! F_I = A' + K N_I B',   V_I = W + K N_I U N_I K'
//! ```
//!
//! The gain `K` is `n x m` and acts through its transpose: the applied
//! input is `u = N_I K' x`.

use serde::{Deserialize, Serialize};

use crate::channels::{eta_squared, mean_mask, ChannelSpec, SubsetTable};
use crate::error::{Error, Result};
use crate::matkit::{cholesky, min_eig_lower_bound, Matrix, SymMatrix, DEFAULT_PD_TOL};

/// Problem instance: plant, cost weights and channel statistics.
#[derive(Clone, Debug)]
pub struct PlantModel {
    a: Matrix,
    b: Matrix,
    u: SymMatrix,
    w: SymMatrix,
    channels: ChannelSpec,
    table: SubsetTable,
    nbar: SymMatrix,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, u: SymMatrix, w: SymMatrix, channels: ChannelSpec) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                op: "PlantModel: B rows vs A",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let m = b.cols();
        if u.dim() != m {
            return Err(Error::DimensionMismatch {
                op: "PlantModel: U vs B columns",
                left: b.shape(),
                right: u.shape(),
            });
        }
        if w.dim() != n {
            return Err(Error::DimensionMismatch {
                op: "PlantModel: W vs A",
                left: a.shape(),
                right: w.shape(),
            });
        }
        if channels.m() != m {
            return Err(Error::DimensionMismatch {
                op: "PlantModel: nu_bar length vs B columns",
                left: b.shape(),
                right: (channels.m(), 1),
            });
        }
        check_psd(&u, "U")?;
        check_psd(&w, "W")?;
        let table = eta_squared(&channels);
        let nbar = mean_mask(&table);
        Ok(Self {
            a,
            b,
            u,
            w,
            channels,
            table,
            nbar,
        })
    }

    /// Same plant and weights with different arrival probabilities.
    pub fn with_channels(&self, channels: ChannelSpec) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.u.clone(), self.w.clone(), channels)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn u(&self) -> &SymMatrix {
        &self.u
    }

    pub fn w(&self) -> &SymMatrix {
        &self.w
    }

    pub fn channels(&self) -> &ChannelSpec {
        &self.channels
    }

    pub fn subsets(&self) -> &SubsetTable {
        &self.table
    }

    /// `Nbar = diag(nu_bar)`.
    pub fn mean_mask(&self) -> &SymMatrix {
        &self.nbar
    }
}

fn check_psd(m: &SymMatrix, what: &'static str) -> Result<()> {
    let bound = min_eig_lower_bound(m)?;
    if bound < -1e-8 * m.frobenius_norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite { what, bound });
    }
    Ok(())
}

/// Feedback gain, `n x m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainMatrix(Matrix);

impl GainMatrix {
    pub fn new(k: Matrix) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::NonFinite { row: 0, col: 0 });
        }
        Ok(Self(k))
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self(Matrix::zeros(n, m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub(crate) fn check_shape(&self, p: &PlantModel) -> Result<()> {
        if self.0.shape() != (p.n(), p.m()) {
            return Err(Error::DimensionMismatch {
                op: "gain vs plant",
                left: self.0.shape(),
                right: (p.n(), p.m()),
            });
        }
        Ok(())
    }
}

/// Zeroes the columns of `x` whose channel is not in `mask` (right
/// multiplication by `N_I`).
pub(crate) fn mask_cols(x: &Matrix, mask: u32) -> Matrix {
    Matrix::from_fn(
        x.rows(),
        x.cols(),
        |i, j| {
            if mask >> j & 1 == 1 {
                x.get(i, j)
            } else {
                0.0
            }
        },
    )
}

/// `N_I H N_I`.
fn mask_both(h: &Matrix, mask: u32) -> Matrix {
    Matrix::from_fn(h.rows(), h.cols(), |i, j| {
        if mask >> i & 1 == 1 && mask >> j & 1 == 1 {
            h.get(i, j)
        } else {
            0.0
        }
    })
}

/// `M(X) = sum_I eta_I^2 N_I (U + B'XB) N_I`.
pub fn masked_curvature(p: &PlantModel, x: &SymMatrix) -> SymMatrix {
    let h = p.u.as_matrix() + x.congruence(&p.b.transpose()).as_matrix();
    let mut acc = Matrix::zeros(p.m(), p.m());
    for s in p.table.iter() {
        if s.weight == 0.0 {
            continue;
        }
        acc = &acc + &mask_both(&h, s.mask).scale(s.weight);
    }
    SymMatrix::symmetrized(acc)
}

fn factor_curvature(p: &PlantModel, x: &SymMatrix) -> Result<crate::matkit::Cholesky> {
    let m = masked_curvature(p, x);
    cholesky(&m, DEFAULT_PD_TOL).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularCurvature { iteration: None },
        other => other,
    })
}

/// `Nbar B' X A`, the `m x n` right-hand side shared by the gain and the
/// Riccati step.
fn coupling(p: &PlantModel, x: &SymMatrix) -> Matrix {
    let bt = p.b.transpose();
    &(&(p.nbar.as_matrix() * &bt) * x.as_matrix()) * &p.a
}

/// `K = -A'XB Nbar M(X)^-1`, computed as the transpose of an SPD solve.
pub fn optimal_gain(p: &PlantModel, x: &SymMatrix) -> Result<GainMatrix> {
    let chol = factor_curvature(p, x)?;
    let kt = chol.solve(&coupling(p, x))?;
    GainMatrix::new(kt.transpose().scale(-1.0))
}

/// `F_I = A' + K N_I B'`.
pub fn closed_loop_factor(p: &PlantModel, k: &GainMatrix, mask: u32) -> Matrix {
    let kn = mask_cols(k.as_matrix(), mask);
    &p.a.transpose() + &(&kn * &p.b.transpose())
}

/// `V_I = W + K N_I U N_I K'`.
pub fn cost_inflation(p: &PlantModel, k: &GainMatrix, mask: u32) -> SymMatrix {
    let kn = mask_cols(k.as_matrix(), mask);
    &p.w + &p.u.congruence(&kn)
}

/// `sum_I eta_I^2 K N_I U N_I K'`, the expected control-cost contribution.
pub fn expected_control_cost(p: &PlantModel, k: &GainMatrix) -> SymMatrix {
    let n = p.n();
    let mut acc = Matrix::zeros(n, n);
    for s in p.table.iter() {
        if s.weight == 0.0 {
            continue;
        }
        let kn = mask_cols(k.as_matrix(), s.mask);
        acc = &acc + &p.u.congruence(&kn).scale(s.weight);
    }
    SymMatrix::symmetrized(acc)
}

/// `phi(K, X) = sum_I eta_I^2 (F_I X F_I' + V_I)`, summed term by term.
pub fn phi(p: &PlantModel, k: &GainMatrix, x: &SymMatrix) -> SymMatrix {
    let n = p.n();
    let mut acc = Matrix::zeros(n, n);
    for s in p.table.iter() {
        if s.weight == 0.0 {
            continue;
        }
        let f = closed_loop_factor(p, k, s.mask);
        let term = x.congruence(&f).as_matrix() + cost_inflation(p, k, s.mask).as_matrix();
        acc = &acc + &term.scale(s.weight);
    }
    SymMatrix::symmetrized(acc)
}

/// One Riccati step `Pi(S)`.
pub fn mare_step(p: &PlantModel, s: &SymMatrix) -> Result<SymMatrix> {
    let chol = factor_curvature(p, s)?;
    let r = coupling(p, s);
    let q = chol.solve(&r)?;
    let base = s.congruence(&p.a.transpose());
    let correction = &r.transpose() * &q;
    Ok(SymMatrix::symmetrized(
        &(base.as_matrix() + p.w.as_matrix()) - &correction,
    ))
}

/// The minimized map `g(X) = min_K phi(K, X)`. Its minimizer is the
/// stationary gain, so this coincides with [`mare_step`].
pub fn g_step(p: &PlantModel, s: &SymMatrix) -> Result<SymMatrix> {
    mare_step(p, s)
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Relative step tolerance `||S_{k+1} - S_k||_F / max(1, ||S_k||_F)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Defaults to `1e12 * max(1, ||W||_F)`.
    pub divergence_threshold: Option<f64>,
    /// Defaults to the zero matrix.
    pub initial: Option<SymMatrix>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            divergence_threshold: None,
            initial: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, p: &PlantModel) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let Some(t) = self.divergence_threshold {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "divergence threshold must be positive, got {t}"
                )));
            }
        }
        if let Some(s0) = &self.initial {
            if s0.dim() != p.n() {
                return Err(Error::DimensionMismatch {
                    op: "initial S0 vs plant",
                    left: s0.shape(),
                    right: (p.n(), p.n()),
                });
            }
            check_psd(s0, "initial S0")?;
        }
        Ok(())
    }

    pub fn threshold(&self, p: &PlantModel) -> f64 {
        self.divergence_threshold
            .unwrap_or_else(|| 1e12 * p.w.frobenius_norm().max(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Converged,
    Diverged,
    MaxIterReached,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::MaxIterReached => "max-iter-reached",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MareSolution {
    pub verdict: Verdict,
    /// Last finite iterate; the fixed point when converged.
    #[serde(rename = "S")]
    pub s: SymMatrix,
    /// Optimal gain at `s`, attached on convergence.
    #[serde(rename = "K")]
    pub gain: Option<GainMatrix>,
    pub iterations: usize,
    pub residual: f64,
    /// Largest `||S_k||_F` seen; bounded runs stay far below the threshold.
    pub peak_norm: f64,
    pub history: Vec<f64>,
}

impl MareSolution {
    pub fn is_converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }
}

/// Plain fixed-point iteration `S_{k+1} = Pi(S_k)`.
pub fn solve_mare(p: &PlantModel, cfg: &SolverConfig) -> Result<MareSolution> {
    cfg.validate(p)?;
    let threshold = cfg.threshold(p);
    let mut s = cfg.initial.clone().unwrap_or_else(|| SymMatrix::zeros(p.n()));
    let mut history = Vec::new();
    let mut peak_norm = s.frobenius_norm();
    for k in 1..=cfg.max_iter {
        let next = mare_step(p, &s).map_err(|e| match e {
            Error::SingularCurvature { .. } => Error::SingularCurvature { iteration: Some(k - 1) },
            other => other,
        })?;
        let norm = next.frobenius_norm();
        if !next.is_finite() || !norm.is_finite() || norm > threshold {
            return Ok(MareSolution {
                verdict: Verdict::Diverged,
                s,
                gain: None,
                iterations: k,
                residual: f64::INFINITY,
                peak_norm: if norm.is_finite() {
                    peak_norm.max(norm)
                } else {
                    f64::INFINITY
                },
                history,
            });
        }
        peak_norm = peak_norm.max(norm);
        let residual = (&next - &s).frobenius_norm() / s.frobenius_norm().max(1.0);
        history.push(residual);
        s = next;
        if residual <= cfg.tol {
            let gain = optimal_gain(p, &s)?;
            return Ok(MareSolution {
                verdict: Verdict::Converged,
                s,
                gain: Some(gain),
                iterations: k,
                residual,
                peak_norm,
                history,
            });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    Ok(MareSolution {
        verdict: Verdict::MaxIterReached,
        s,
        gain: None,
        iterations: cfg.max_iter,
        residual,
        peak_norm,
        history,
    })
}

/// `||Pi(S) - S||_F / max(1, ||S||_F)`.
pub fn fixed_point_residual(p: &PlantModel, s: &SymMatrix) -> Result<f64> {
    let next = mare_step(p, s)?;
    Ok((&next - s).frobenius_norm() / s.frobenius_norm().max(1.0))
}
