//! Mean-square stability of the closed loop under a fixed gain.
//!
//! The Lyapunov-type operator is `L(Y) = sum_I eta_I^2 F_I Y F_I'`. Under
//! column-stacking it becomes `T = sum_I eta_I^2 (F_I kron F_I)`, and the
//! closed loop is mean-square stable exactly when `rho(T) < 1`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mare::{closed_loop_factor, GainMatrix, PlantModel};
use crate::matkit::{kron, Matrix, SymMatrix};

/// Largest state dimension accepted by [`lyap_matrix`] (`T` is `n^2 x n^2`).
pub const MAX_VECTORIZED_DIM: usize = 30;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 100_000;
const LYAP_TOL: f64 = 1e-10;

#[derive(Debug)]
pub struct LyapOperator {
    n: usize,
    weights: Vec<f64>,
    factors: Vec<Matrix>,
    matrix: OnceLock<Matrix>,
}

impl LyapOperator {
    pub fn new(p: &PlantModel, k: &GainMatrix) -> Result<Self> {
        k.check_shape(p)?;
        let (weights, factors) = p
            .subsets()
            .iter()
            .map(|s| (s.weight, closed_loop_factor(p, k, s.mask)))
            .unzip();
        Ok(Self {
            n: p.n(),
            weights,
            factors,
            matrix: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The cached closed-loop factors `F_I`, one per subset in table order.
    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, y: &SymMatrix) -> SymMatrix {
        self.weighted_sum(y, |f| f.clone())
    }

    /// Adjoint action `sum_I eta_I^2 F_I' Y F_I`, which propagates the state
    /// covariance of `x+ = F_I' x`.
    pub fn apply_adjoint(&self, y: &SymMatrix) -> SymMatrix {
        self.weighted_sum(y, Matrix::transpose)
    }

    fn weighted_sum(&self, y: &SymMatrix, side: impl Fn(&Matrix) -> Matrix) -> SymMatrix {
        let mut acc = Matrix::zeros(self.n, self.n);
        for (w, f) in self.weights.iter().zip(&self.factors) {
            if *w == 0.0 {
                continue;
            }
            acc = &acc + &y.congruence(&side(f)).as_matrix().scale(*w);
        }
        SymMatrix::from_matrix(acc).expect("square by construction")
    }
}

pub fn lyap_apply(op: &LyapOperator, y: &SymMatrix) -> SymMatrix {
    op.apply(y)
}

/// `T = sum_I eta_I^2 (F_I kron F_I)`, built once per operator.
pub fn lyap_matrix(op: &LyapOperator) -> Result<&Matrix> {
    if op.n > MAX_VECTORIZED_DIM {
        return Err(Error::SizeGuard(format!(
            "state dimension {} exceeds {MAX_VECTORIZED_DIM} for the vectorized operator",
            op.n
        )));
    }
    Ok(op.matrix.get_or_init(|| {
        let nn = op.n * op.n;
        let mut t = Matrix::zeros(nn, nn);
        for (w, f) in op.weights.iter().zip(&op.factors) {
            if *w == 0.0 {
                continue;
            }
            t = &t + &kron(f, f).scale(*w);
        }
        t
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralRadius {
    pub rho: f64,
    /// `||T v - rho v|| / rho` at the returned unit vector.
    pub residual: f64,
    pub iterations: usize,
    /// Whether the perturbed restart was needed.
    pub restarted: bool,
}

impl SpectralRadius {
    pub fn is_stable(&self) -> bool {
        self.rho < 1.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

enum Power {
    Done(SpectralRadius),
    Annihilated,
    Stalled { estimate: f64, residual: f64 },
}

fn power_iterate(t: &Matrix, start: Vec<f64>) -> Power {
    let mut v = start;
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=POWER_MAX_ITER {
        let tv = t.mul_vec(&v);
        let tn = norm(&tv);
        if tn == 0.0 {
            return if it == 1 {
                Power::Annihilated
            } else {
                // nilpotent: T^k v = 0
                Power::Done(SpectralRadius {
                    rho: 0.0,
                    residual: 0.0,
                    iterations: it,
                    restarted: false,
                })
            };
        }
        // Rayleigh quotient; exact at an eigenvector even for non-normal T
        let lambda: f64 = v.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let r: f64 = tv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        estimate = lambda.abs();
        residual = if estimate > 0.0 { r / estimate } else { f64::INFINITY };
        if residual <= POWER_TOL {
            return Power::Done(SpectralRadius {
                rho: estimate,
                residual,
                iterations: it,
                restarted: false,
            });
        }
        v = tv.into_iter().map(|x| x / tn).collect();
    }
    Power::Stalled { estimate, residual }
}

/// Spectral radius of the vectorized operator by power iteration from
/// `vec(I)`, with one perturbed restart if that start is annihilated.
pub fn ms_spectral_radius(op: &LyapOperator) -> Result<SpectralRadius> {
    let t = lyap_matrix(op)?;
    let n = op.n;
    if t.max_abs() == 0.0 {
        return Ok(SpectralRadius {
            rho: 0.0,
            residual: 0.0,
            iterations: 0,
            restarted: false,
        });
    }
    let start = Matrix::identity(n).vec();
    let outcome = match power_iterate(t, start.clone()) {
        Power::Annihilated => {
            let mut perturbed = start;
            perturbed[0] += 1e-3;
            match power_iterate(t, perturbed) {
                Power::Done(r) => Power::Done(SpectralRadius { restarted: true, ..r }),
                other => other,
            }
        }
        other => other,
    };
    match outcome {
        Power::Done(r) => Ok(r),
        Power::Annihilated => Ok(SpectralRadius {
            rho: 0.0,
            residual: 0.0,
            iterations: 1,
            restarted: true,
        }),
        Power::Stalled { estimate, residual } => Err(Error::PowerIteration {
            estimate,
            residual,
            iterations: POWER_MAX_ITER,
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LyapBound {
    Bounded {
        limit: SymMatrix,
        iterations: usize,
    },
    Unbounded {
        iterations: usize,
    },
    /// Neither criterion triggered within the iteration budget.
    Inconclusive {
        iterations: usize,
        residual: f64,
    },
}

impl LyapBound {
    pub fn is_bounded(&self) -> bool {
        matches!(self, LyapBound::Bounded { .. })
    }
}

/// Iterates `Y_{k+1} = L(Y_k) + offset` from `Y_0 = 0`.
pub fn lyap_iterate(op: &LyapOperator, offset: &SymMatrix, max_iter: usize, bound: f64) -> LyapBound {
    iterate_affine(|y| op.apply(y), offset, max_iter, bound, LYAP_TOL)
}

pub(crate) fn iterate_affine(
    apply: impl Fn(&SymMatrix) -> SymMatrix,
    offset: &SymMatrix,
    max_iter: usize,
    bound: f64,
    tol: f64,
) -> LyapBound {
    let mut y = SymMatrix::zeros(offset.dim());
    let mut residual = f64::INFINITY;
    for k in 1..=max_iter {
        let next = &apply(&y) + offset;
        let nn = next.frobenius_norm();
        if !nn.is_finite() || nn > bound {
            return LyapBound::Unbounded { iterations: k };
        }
        residual = (&next - &y).frobenius_norm() / y.frobenius_norm().max(1.0);
        y = next;
        if residual <= tol {
            return LyapBound::Bounded {
                limit: y,
                iterations: k,
            };
        }
    }
    LyapBound::Inconclusive {
        iterations: max_iter,
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelSpec;

    fn scalar_op(a: f64, k: f64, nu: f64) -> LyapOperator {
        let one = |v: f64| Matrix::from_rows(&[[v]]).unwrap();
        let p = PlantModel::new(
            one(a),
            one(1.0),
            SymMatrix::identity(1),
            SymMatrix::identity(1),
            ChannelSpec::new(vec![nu]).unwrap(),
        )
        .unwrap();
        LyapOperator::new(&p, &GainMatrix::new(one(k)).unwrap()).unwrap()
    }

    #[test]
    fn apply_scalar_cases() {
        let op = scalar_op(2.0, -1.75, 0.8);
        // 0.2 * 2^2 + 0.8 * 0.25^2
        let y = op.apply(&SymMatrix::identity(1));
        assert!((y.get(0, 0) - 0.85).abs() <= 1e-15);
        assert_eq!(op.apply(&SymMatrix::zeros(1)), SymMatrix::zeros(1));
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let a = Matrix::from_rows(&[[0.5, 1.0], [-0.2, 0.9]]).unwrap();
        let p = PlantModel::new(
            a.clone(),
            Matrix::from_rows(&[[1.0], [0.0]]).unwrap(),
            SymMatrix::identity(1),
            SymMatrix::identity(2),
            ChannelSpec::new(vec![0.6]).unwrap(),
        )
        .unwrap();
        let op = LyapOperator::new(&p, &GainMatrix::zeros(2, 1)).unwrap();
        let y = SymMatrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]).unwrap();
        let expected = y.congruence(&a.transpose());
        assert!((&*op.apply(&y) - &*expected).frobenius_norm() <= 1e-14);
        let t = lyap_matrix(&op).unwrap();
        let direct = kron(&a.transpose(), &a.transpose());
        assert!((t - &direct).frobenius_norm() <= 1e-14);
    }

    #[test]
    fn scalar_vectorized_and_radius() {
        let op = scalar_op(2.0, -1.75, 0.8);
        let t = lyap_matrix(&op).unwrap();
        assert_eq!(t.shape(), (1, 1));
        assert!((t.get(0, 0) - 0.85).abs() <= 1e-15);
        let r = ms_spectral_radius(&op).unwrap();
        assert!((r.rho - 0.85).abs() <= 1e-10);
        assert!(r.is_stable());
        let open = ms_spectral_radius(&scalar_op(2.0, 0.0, 0.8)).unwrap();
        assert!((open.rho - 4.0).abs() <= 1e-10);
    }

    #[test]
    fn nilpotent_operator_has_zero_radius() {
        let op = scalar_op(1.0, -1.0, 1.0);
        assert_eq!(ms_spectral_radius(&op).unwrap().rho, 0.0);
    }

    #[test]
    fn iterate_geometric_series() {
        let op = scalar_op(2.0, -1.75, 0.8);
        match lyap_iterate(&op, &SymMatrix::identity(1), 100_000, 1e12) {
            LyapBound::Bounded { limit, .. } => {
                assert!((limit.get(0, 0) - 1.0 / 0.15).abs() <= 1e-8, "{limit:?}");
            }
            other => panic!("{other:?}"),
        }
        match lyap_iterate(&op, &SymMatrix::zeros(1), 100, 1e12) {
            LyapBound::Bounded { limit, .. } => assert_eq!(limit.get(0, 0), 0.0),
            other => panic!("{other:?}"),
        }
        let open = scalar_op(2.0, 0.0, 0.8);
        assert!(matches!(
            lyap_iterate(&open, &SymMatrix::identity(1), 100_000, 1e12),
            LyapBound::Unbounded { .. }
        ));
        assert!(matches!(
            lyap_iterate(&op, &SymMatrix::identity(1), 3, 1e12),
            LyapBound::Inconclusive { iterations: 3, .. }
        ));
    }

    #[test]
    fn gain_shape_is_checked() {
        let p = PlantModel::new(
            Matrix::identity(2),
            Matrix::from_rows(&[[1.0], [0.0]]).unwrap(),
            SymMatrix::identity(1),
            SymMatrix::identity(2),
            ChannelSpec::new(vec![0.6]).unwrap(),
        )
        .unwrap();
        assert!(LyapOperator::new(&p, &GainMatrix::zeros(1, 1)).is_err());
    }
}
