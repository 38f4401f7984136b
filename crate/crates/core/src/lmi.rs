//! Block LMI certificate for `S > phi(K, S)`.
//!
//! With `Y = S^-1` and `Z = S^-1 K` the strict inequality `S > 0`,
//! `S > phi(K, S)` is equivalent to positive definiteness of
//!
//! ```text
//! [ Y    Y     G_1  H_1  ...  G_q  H_q ]
//! [ Y    W^-1  0    0    ...  0    0   ]
//! [ G_1' 0     Y    0                  ]
//! [ H_1' 0     0    I                  ]
//! [ ...                  ...           ]
//! [ G_q' 0                    Y    0   ]
//! [ H_q' 0                    0    I   ]
//! ```
//!
//! where, for each subset `I` in table order, `G_I = eta_I (Y A' + Z N_I B')`
//! and `H_I = eta_I Z N_I U^{1/2}`. Taking Schur complements of the
//! diagonal tail gives `Y - YWY - sum_I eta_I^2 (...)`, which equals
//! `Y (S - phi(K, S)) Y`.
//!
//! Certificates are only ever constructed from a MARE fixed point. A failed
//! construction means "no certificate found", never a proof of
//! infeasibility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mare::{mask_cols, phi, solve_mare, GainMatrix, MareSolution, PlantModel, SolverConfig, Verdict};
use crate::matkit::{cholesky, inverse_spd, sqrt_psd, Matrix, SymMatrix, DEFAULT_PD_TOL};

/// Relative pivot tolerance of the PD test on the assembled matrix.
pub const LMI_PD_TOL: f64 = 1e-10;

/// Default inflation margin applied to a fixed point.
pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LmiOptions {
    /// Replace a singular `W` by `W + eps*I`, `eps = 1e-9 * max(1, tr(W)/n)`.
    pub regularize: bool,
}

#[derive(Clone, Debug)]
pub struct LmiMatrix {
    pub matrix: SymMatrix,
    /// `eps` added to `W` when regularization was applied.
    pub w_regularization: Option<f64>,
}

/// Row/column offset and size of each block, in assembly order.
pub fn block_layout(n: usize, m: usize, subsets: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, n), (n, n)];
    let mut off = 2 * n;
    for _ in 0..subsets {
        out.push((off, n));
        out.push((off + n, m));
        off += n + m;
    }
    out
}

fn effective_w_inverse(p: &PlantModel, opts: LmiOptions) -> Result<(SymMatrix, Option<f64>)> {
    let w = p.w();
    if cholesky(w, DEFAULT_PD_TOL).is_ok() {
        return Ok((inverse_spd(w)?, None));
    }
    if !opts.regularize {
        return Err(Error::SingularCostWeight);
    }
    let n = p.n();
    let eps = 1e-9 * (w.trace() / n as f64).max(1.0);
    let reg = w + &SymMatrix::identity(n).scale(eps);
    Ok((inverse_spd(&reg)?, Some(eps)))
}

fn put(target: &mut Matrix, row: usize, col: usize, block: &Matrix) {
    for i in 0..block.rows() {
        for j in 0..block.cols() {
            target.set(row + i, col + j, block.get(i, j));
            target.set(col + j, row + i, block.get(i, j));
        }
    }
}

pub fn assemble_lmi(p: &PlantModel, y: &SymMatrix, z: &Matrix, opts: LmiOptions) -> Result<LmiMatrix> {
    let (n, m) = (p.n(), p.m());
    if y.dim() != n {
        return Err(Error::DimensionMismatch {
            op: "assemble_lmi: Y",
            left: y.shape(),
            right: (n, n),
        });
    }
    if z.shape() != (n, m) {
        return Err(Error::DimensionMismatch {
            op: "assemble_lmi: Z",
            left: z.shape(),
            right: (n, m),
        });
    }
    let (w_inv, w_regularization) = effective_w_inverse(p, opts)?;
    let u_half = sqrt_psd(p.u())?;
    let table = p.subsets();
    let layout = block_layout(n, m, table.len());
    let dim = layout.last().map(|(o, s)| o + s).unwrap_or(2 * n);
    let mut out = Matrix::zeros(dim, dim);

    put(&mut out, 0, 0, y);
    put(&mut out, 0, n, y);
    put(&mut out, n, n, &w_inv);
    let yat = y.as_matrix() * &p.a().transpose();
    let bt = p.b().transpose();
    let eye_m = Matrix::identity(m);
    for (j, s) in table.iter().enumerate() {
        let eta = s.weight.sqrt();
        let (cl, _) = layout[2 + 2 * j];
        let (cost, _) = layout[3 + 2 * j];
        let zn = mask_cols(z, s.mask);
        let g = (&yat + &(&zn * &bt)).scale(eta);
        let h = (&zn * u_half.as_matrix()).scale(eta);
        put(&mut out, 0, cl, &g);
        put(&mut out, 0, cost, &h);
        put(&mut out, cl, cl, y);
        put(&mut out, cost, cost, &eye_m);
    }
    Ok(LmiMatrix {
        matrix: SymMatrix::from_matrix(out)?,
        w_regularization,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmiCheck {
    pub feasible: bool,
    /// Smallest relative Cholesky pivot, or the failing one.
    pub min_pivot: f64,
    pub w_regularization: Option<f64>,
}

/// Cholesky-based PD test of the assembled matrix.
///
/// The matrix is first equilibrated to unit diagonal (`D M D` with
/// `D = diag(m_ii)^{-1/2}`), a congruence that preserves definiteness, so
/// the relative pivot tolerance does not depend on how `W^-1` and `Y`
/// are scaled against each other.
pub fn check_lmi(p: &PlantModel, y: &SymMatrix, z: &Matrix, opts: LmiOptions) -> Result<LmiCheck> {
    let lmi = assemble_lmi(p, y, z, opts)?;
    let m = &lmi.matrix;
    let diag = m.diag();
    if let Some(idx) = diag.iter().position(|d| !(*d > 0.0)) {
        let scale = diag.iter().fold(0.0_f64, |a, d| a.max(d.abs())).max(f64::MIN_POSITIVE);
        return Ok(LmiCheck {
            feasible: false,
            min_pivot: diag[idx] / scale,
            w_regularization: lmi.w_regularization,
        });
    }
    let d: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let equilibrated = SymMatrix::from_matrix(Matrix::from_fn(m.dim(), m.dim(), |i, j| d[i] * m.get(i, j) * d[j]))?;
    let (feasible, min_pivot) = match cholesky(&equilibrated, LMI_PD_TOL) {
        Ok(c) => (true, c.min_pivot()),
        Err(Error::NotPositiveDefinite { pivot, .. }) => (false, pivot),
        Err(e) => return Err(e),
    };
    Ok(LmiCheck {
        feasible,
        min_pivot,
        w_regularization: lmi.w_regularization,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiCertificate {
    #[serde(rename = "Y")]
    pub y: SymMatrix,
    #[serde(rename = "Z")]
    pub z: Matrix,
    pub delta: f64,
    pub min_pivot: f64,
    pub feasible: bool,
    pub w_regularization: Option<f64>,
}

impl LmiCertificate {
    /// Re-runs the PD check on the stored `(Y, Z)`.
    pub fn recheck(&self, p: &PlantModel) -> Result<LmiCheck> {
        let opts = LmiOptions {
            regularize: self.w_regularization.is_some(),
        };
        check_lmi(p, &self.y, &self.z, opts)
    }
}

/// Builds `(Y, Z)` from `S = (1 + delta) S_bar`, `K = K_bar`.
///
/// At the fixed point `S_bar = phi(K_bar, S_bar)`, and because `phi` is
/// affine in `S` the inflated candidate satisfies
/// `S - phi(K_bar, S) = delta * (W + sum_I eta_I^2 K_bar N_I U N_I K_bar')`.
pub fn certificate_from_solution(
    p: &PlantModel,
    sol: &MareSolution,
    delta: f64,
    opts: LmiOptions,
) -> Result<LmiCertificate> {
    let gain = match (&sol.verdict, &sol.gain) {
        (Verdict::Converged, Some(k)) => k,
        (v, _) => return Err(Error::NotConverged(v.to_string())),
    };
    if !(delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be non-negative, got {delta}")));
    }
    let s = sol.s.scale(1.0 + delta);
    let y = inverse_spd(&s)?;
    let z = y.as_matrix() * gain.as_matrix();
    let check = check_lmi(p, &y, &z, opts)?;
    Ok(LmiCertificate {
        y,
        z,
        delta,
        min_pivot: check.min_pivot,
        feasible: check.feasible,
        w_regularization: check.w_regularization,
    })
}

/// `S - phi(K, S)`: the direct form of the inequality the LMI encodes.
pub fn strictness_margin(p: &PlantModel, k: &GainMatrix, s: &SymMatrix) -> SymMatrix {
    s - &phi(p, k, s)
}

#[derive(Clone, Debug)]
pub enum Certification {
    Certified {
        solution: MareSolution,
        certificate: LmiCertificate,
    },
    /// The MARE iteration did not converge, so the pipeline has no candidate.
    NoCertificate { solution: MareSolution },
}

/// Solve the MARE and, if it converges, certify the inflated fixed point.
pub fn certify_via_mare(p: &PlantModel, cfg: &SolverConfig, delta: f64, opts: LmiOptions) -> Result<Certification> {
    let solution = solve_mare(p, cfg)?;
    if !solution.is_converged() {
        return Ok(Certification::NoCertificate { solution });
    }
    let certificate = certificate_from_solution(p, &solution, delta, opts)?;
    Ok(Certification::Certified { solution, certificate })
}
