//! Shared instance generators and independent oracles for the integration
//! tests. Oracles go through nalgebra so they never share code with the
//! implementation they check.
#![allow(dead_code)]

use mare_core::channels::ChannelSpec;
use mare_core::mare::{GainMatrix, PlantModel};
use mare_core::matkit::{Matrix, SymMatrix};
use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn sym_from_na(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::from_matrix(from_na(m)).unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `G G' + floor * I` with `G` Gaussian.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> SymMatrix {
    let g = gaussian(rng, n, n);
    let gg = &g * &g.transpose();
    SymMatrix::from_matrix(&gg + &Matrix::identity(n).scale(floor)).unwrap()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &Matrix) -> f64 {
    to_na(m).symmetric_eigen().eigenvalues.min()
}

/// Spectral radius of a general square matrix (complex eigenvalues).
pub fn spectral_radius(m: &Matrix) -> f64 {
    radius_of(to_na(m), None)
}

/// Spectral radius from a real Schur form with a bounded sweep count. If the
/// QR sweeps stall, falls back to the growth rate of `t^k start`, which
/// picks out the dominant eigenvalue of a cone-preserving operator when
/// `start` lies inside the cone.
fn radius_of(t: DMatrix<f64>, start: Option<DVector<f64>>) -> f64 {
    if let Some(schur) = Schur::try_new(t.clone(), f64::EPSILON, 50_000) {
        return schur.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    }
    let mut v = start.unwrap_or_else(|| DVector::from_element(t.nrows(), 1.0));
    v /= v.norm();
    let mut log_growth = 0.0;
    let (burn, keep) = (2_000, 20_000);
    for k in 0..burn + keep {
        let next = &t * &v;
        let nn = next.norm();
        if nn == 0.0 {
            return 0.0;
        }
        if k >= burn {
            log_growth += nn.ln();
        }
        v = next / nn;
    }
    (log_growth / keep as f64).exp()
}

/// Spectral radius of `sum_I eta_I^2 (F_I kron F_I)` built directly from
/// the definitions, independent of the crate's operator code.
pub fn ms_radius_oracle(p: &PlantModel, k: &GainMatrix) -> f64 {
    let n = p.n();
    let a = to_na(p.a());
    let b = to_na(p.b());
    let kk = to_na(k.as_matrix());
    let mut t = DMatrix::<f64>::zeros(n * n, n * n);
    for s in p.subsets().iter() {
        let mask = DMatrix::from_diagonal(&DVector::from_iterator(
            p.m(),
            (0..p.m()).map(|i| f64::from(s.mask >> i & 1)),
        ));
        let f = a.transpose() + &kk * mask * b.transpose();
        t += f.kronecker(&f) * s.weight;
    }
    let start = DVector::from_vec(Matrix::identity(n).vec());
    radius_of(t, Some(start))
}

/// Spectral radius of the fourth-moment operator `sum_I eta_I^2 G_I^{x4}`.
/// Below one the sample second moment has finite variance.
pub fn fourth_moment_radius(p: &PlantModel, k: &GainMatrix) -> f64 {
    let n = p.n();
    let a = to_na(p.a());
    let b = to_na(p.b());
    let kk = to_na(k.as_matrix());
    let mut t = DMatrix::<f64>::zeros(n.pow(4), n.pow(4));
    for s in p.subsets().iter() {
        let mask = DMatrix::from_diagonal(&DVector::from_iterator(
            p.m(),
            (0..p.m()).map(|i| f64::from(s.mask >> i & 1)),
        ));
        let g = &a + &b * mask * kk.transpose();
        let g2 = g.kronecker(&g);
        t += g2.kronecker(&g2) * s.weight;
    }
    // fourth moment tensor of N(0, I), an interior point of the moment cone
    let d = |i: usize, j: usize| f64::from(u8::from(i == j));
    let start = DVector::from_fn(n.pow(4), |idx, _| {
        let (i, j, k, l) = (idx % n, idx / n % n, idx / n / n % n, idx / n / n / n);
        d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(i, l) * d(j, k)
    });
    radius_of(t, Some(start))
}

/// Classical Riccati iteration `S <- A'SA + W - A'SB (U + B'SB)^-1 B'SA`
/// from zero.
pub fn classical_dare(a: &Matrix, b: &Matrix, u: &Matrix, w: &Matrix) -> DMatrix<f64> {
    let (a, b, u, w) = (to_na(a), to_na(b), to_na(u), to_na(w));
    let mut s = DMatrix::<f64>::zeros(a.nrows(), a.nrows());
    for _ in 0..1_000_000 {
        let bsb = &u + b.transpose() * &s * &b;
        let inv = bsb.try_inverse().expect("U + B'SB invertible");
        let asb = a.transpose() * &s * &b;
        let mut next = a.transpose() * &s * &a + &w - &asb * inv * asb.transpose();
        next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &s).norm() / s.norm().max(1.0);
        s = next;
        if diff <= 1e-15 {
            break;
        }
    }
    s
}

/// Solves `(I - sum_I eta_I^2 G_I kron G_I) vec(Sigma) = vec(Q)` directly,
/// with `G_I = A + B N_I K'`.
pub fn covariance_direct(p: &PlantModel, k: &GainMatrix, q: &Matrix) -> DMatrix<f64> {
    let n = p.n();
    let a = to_na(p.a());
    let b = to_na(p.b());
    let kk = to_na(k.as_matrix());
    let mut lhs = DMatrix::<f64>::identity(n * n, n * n);
    for s in p.subsets().iter() {
        let mask = DMatrix::from_diagonal(&DVector::from_iterator(
            p.m(),
            (0..p.m()).map(|i| f64::from(s.mask >> i & 1)),
        ));
        let g = &a + &b * mask * kk.transpose();
        lhs -= g.kronecker(&g) * s.weight;
    }
    let rhs = DVector::from_vec(q.vec());
    let x = lhs.lu().solve(&rhs).expect("nonsingular");
    DMatrix::from_column_slice(n, n, x.as_slice())
}

/// Random plant with `A` scaled to spectral radius `rho_a`, Gaussian `B`,
/// and positive definite `U`, `W`.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, rho_a: f64, nu: Vec<f64>) -> PlantModel {
    let a0 = gaussian(rng, n, n);
    let r = spectral_radius(&a0).max(1e-3);
    let a = a0.scale(rho_a / r);
    let b = gaussian(rng, n, m);
    let u = random_psd(rng, m, 0.5);
    let w = random_psd(rng, n, 0.5);
    PlantModel::new(a, b, u, w, ChannelSpec::new(nu).unwrap()).unwrap()
}

pub fn random_nu(rng: &mut ChaCha8Rng, m: usize, lo: f64) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(lo..=1.0)).collect()
}

pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).frobenius_norm() / b.frobenius_norm().max(1.0)
}
