//! Operation examples checked against independent oracles.

mod common;

use common::*;
use mare_core::channels::ChannelSpec;
use mare_core::lmi::{certificate_from_solution, LmiOptions};
use mare_core::mare::{g_step, optimal_gain, phi, solve_mare, GainMatrix, PlantModel, SolverConfig, Verdict};
use mare_core::matkit::{kron, min_eig_lower_bound, solve_spd, Matrix, SymMatrix};
use mare_core::msstab::{lyap_matrix, ms_spectral_radius, LyapOperator};
use mare_core::simloop::{covariance_fixed_point, simulate, SimConfig};
use mare_core::sweep::{sweep_boundary, SweepConfig};

#[test]
fn min_eig_matches_dense_eigensolver() {
    let mut r = rng(1);
    for _ in 0..50 {
        let g = gaussian(&mut r, 5, 5);
        let s = SymMatrix::from_matrix(&g + &g.transpose()).unwrap();
        let bound = min_eig_lower_bound(&s).unwrap();
        let exact = min_eig(&s);
        let scale = s.frobenius_norm();
        assert!(bound <= exact + 1e-12 * scale, "{bound} > {exact}");
        assert!(exact - bound <= 1e-8 * scale, "{bound} vs {exact}");
    }
}

#[test]
fn solve_spd_random_four_by_four() {
    let mut r = rng(2);
    for _ in 0..20 {
        let m = random_psd(&mut r, 4, 0.1);
        let rhs = gaussian(&mut r, 4, 3);
        let x = solve_spd(&m, &rhs).unwrap();
        let res = (&(&*m * &x) - &rhs).frobenius_norm();
        assert!(res <= 1e-10 * rhs.frobenius_norm());
    }
}

#[test]
fn stationary_gain_has_zero_directional_derivative() {
    let mut r = rng(3);
    for _ in 0..30 {
        let (n, m) = (3, 2);
        let nu = random_nu(&mut r, m, 0.2);
        let p = random_plant(&mut r, n, m, 1.2, nu);
        let x = random_psd(&mut r, n, 0.0);
        let k = optimal_gain(&p, &x).unwrap();
        let base = phi(&p, &k, &x);
        let scale = base.frobenius_norm().max(1.0);
        let h = 1e-5 * k.as_matrix().frobenius_norm().max(1.0);
        for i in 0..n {
            for j in 0..m {
                let mut plus = k.as_matrix().clone();
                let mut minus = k.as_matrix().clone();
                plus.set(i, j, plus.get(i, j) + h);
                minus.set(i, j, minus.get(i, j) - h);
                let d =
                    &*phi(&p, &GainMatrix::new(plus).unwrap(), &x) - &*phi(&p, &GainMatrix::new(minus).unwrap(), &x);
                let deriv = d.frobenius_norm() / (2.0 * h);
                assert!(deriv <= 1e-5 * scale, "derivative {deriv}");
            }
        }
        // g is the minimum over K
        let g = g_step(&p, &x).unwrap();
        for _ in 0..5 {
            let dk = gaussian(&mut r, n, m);
            let other = phi(&p, &GainMatrix::new(k.as_matrix() + &dk).unwrap(), &x);
            assert!(min_eig(&(&*other - &*g)) >= -1e-8 * scale);
        }
    }
}

#[test]
fn certain_channels_match_classical_riccati() {
    let mut r = rng(4);
    for _ in 0..10 {
        let p = random_plant(&mut r, 3, 2, 1.3, vec![1.0, 1.0]);
        let cfg = SolverConfig {
            tol: 1e-13,
            max_iter: 100_000,
            ..SolverConfig::default()
        };
        let sol = solve_mare(&p, &cfg).unwrap();
        assert_eq!(sol.verdict, Verdict::Converged);
        let oracle = from_na(&classical_dare(p.a(), p.b(), p.u(), p.w()));
        assert!(rel_diff(&sol.s, &oracle) <= 1e-8);
    }
}

#[test]
fn lyap_matrix_probe_identity() {
    let mut r = rng(5);
    let p = random_plant(&mut r, 3, 2, 1.0, vec![0.7, 0.4]);
    let k = GainMatrix::new(gaussian(&mut r, 3, 2)).unwrap();
    let op = LyapOperator::new(&p, &k).unwrap();
    let t = lyap_matrix(&op).unwrap();
    for _ in 0..10 {
        let g = gaussian(&mut r, 3, 3);
        let y = SymMatrix::from_matrix(&g + &g.transpose()).unwrap();
        let lhs = t.mul_vec(&y.vec());
        let rhs = op.apply(&y).vec();
        let err: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * norm.max(1.0), "{err}");
    }
    // the vectorization identity kron(a, b) vec(X) = vec(b X a')
    let a = gaussian(&mut r, 2, 3);
    let b = gaussian(&mut r, 4, 2);
    let x = gaussian(&mut r, 2, 3);
    let lhs = kron(&a, &b).mul_vec(&x.vec());
    let rhs = (&(&b * &x) * &a.transpose()).vec();
    for (l, r) in lhs.iter().zip(&rhs) {
        assert!((l - r).abs() <= 1e-12);
    }
}

#[test]
fn spectral_radius_matches_dense_eigenvalues() {
    let mut r = rng(6);
    for _ in 0..30 {
        let nu = random_nu(&mut r, 2, 0.3);
        let p = random_plant(&mut r, 3, 2, 1.1, nu);
        let k = GainMatrix::new(gaussian(&mut r, 3, 2).scale(0.3)).unwrap();
        let op = LyapOperator::new(&p, &k).unwrap();
        let got = ms_spectral_radius(&op).unwrap();
        let oracle = ms_radius_oracle(&p, &k);
        assert!(
            (got.rho - oracle).abs() <= 1e-8 * oracle.max(1.0),
            "{} vs {oracle}",
            got.rho
        );
    }
}

#[test]
fn classical_closed_loop_is_stable() {
    let mut r = rng(7);
    let p = random_plant(&mut r, 3, 1, 1.4, vec![1.0]);
    let sol = solve_mare(&p, &SolverConfig::default()).unwrap();
    let k = sol.gain.unwrap();
    let rho = ms_spectral_radius(&LyapOperator::new(&p, &k).unwrap()).unwrap().rho;
    // certain delivery: rho(T) = rho(A + B K')^2
    let acl = p.a() + &(p.b() * &k.as_matrix().transpose());
    let classical = spectral_radius(&acl);
    assert!(rho < 1.0);
    assert!((rho - classical * classical).abs() <= 1e-8);
}

#[test]
fn covariance_fixed_point_matches_direct_solve() {
    let mut r = rng(8);
    // certain delivery: classical Lyapunov equation
    let p = random_plant(&mut r, 3, 2, 1.2, vec![1.0, 1.0]);
    let k = solve_mare(&p, &SolverConfig::default()).unwrap().gain.unwrap();
    let q = random_psd(&mut r, 3, 0.2);
    let fp = covariance_fixed_point(&p, &k, &q).unwrap();
    let direct = from_na(&covariance_direct(&p, &k, &q));
    assert!(rel_diff(&fp.sigma, &direct) <= 1e-10);
    // lossy channels
    let p = random_plant(&mut r, 3, 2, 1.1, vec![0.8, 0.9]);
    let k = solve_mare(&p, &SolverConfig::default()).unwrap().gain.unwrap();
    let fp = covariance_fixed_point(&p, &k, &q).unwrap();
    let direct = from_na(&covariance_direct(&p, &k, &q));
    assert!(rel_diff(&fp.sigma, &direct) <= 1e-10);
}

#[test]
fn inflated_fixed_point_identity() {
    let mut r = rng(9);
    let nu = random_nu(&mut r, 2, 0.7);
    let p = random_plant(&mut r, 3, 2, 1.1, nu);
    let cfg = SolverConfig {
        tol: 1e-13,
        ..SolverConfig::default()
    };
    let sol = solve_mare(&p, &cfg).unwrap();
    let k = sol.gain.clone().unwrap();
    let delta = 1e-3;
    let s = sol.s.scale(1.0 + delta);
    let lhs = &s - &phi(&p, &k, &s);
    let ctrl = mare_core::mare::expected_control_cost(&p, &k);
    let rhs = (p.w() + &ctrl).scale(delta);
    assert!((&*lhs - &*rhs).frobenius_norm() <= 1e-10 * sol.s.frobenius_norm().max(1.0));
    let cert = certificate_from_solution(&p, &sol, delta, LmiOptions::default()).unwrap();
    assert!(cert.feasible);
}

#[test]
fn two_channel_sweep_matches_grid_scan() {
    let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.5]]).unwrap();
    let b = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
    let p = PlantModel::new(
        a,
        b,
        SymMatrix::identity(2),
        SymMatrix::identity(2),
        ChannelSpec::new(vec![1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let dir = [1.0, 0.6];
    let cfg = SweepConfig::new(0.05, 1.0);
    let out = sweep_boundary(&p, &dir, &cfg).unwrap();

    // brute-force scan on a 0.01 grid
    let mut first_converged = None;
    for i in 5..=100 {
        let t = i as f64 / 100.0;
        let model = p
            .with_channels(ChannelSpec::new(vec![t * dir[0], t * dir[1]]).unwrap())
            .unwrap();
        if solve_mare(&model, &cfg.solver).unwrap().verdict == Verdict::Converged {
            first_converged = Some(t);
            break;
        }
    }
    let grid = first_converged.expect("grid scan found no converging probe");
    assert!(
        out.boundary <= grid + 1e-3 && out.boundary >= grid - 0.01 - 1e-3,
        "{} vs {grid}",
        out.boundary
    );
}

fn scalar_sim_case() -> (PlantModel, GainMatrix) {
    let one = |v: f64| Matrix::from_rows(&[[v]]).unwrap();
    let p = PlantModel::new(
        one(2.0),
        one(1.0),
        SymMatrix::identity(1),
        SymMatrix::identity(1),
        ChannelSpec::new(vec![0.8]).unwrap(),
    )
    .unwrap();
    (p, GainMatrix::new(one(-1.75)).unwrap())
}

#[test]
#[ignore = "heavy tail: the fourth moment diverges (0.2*16 + 0.8/256 > 1), so the sample \
            second moment converges like N^-0.14 and 5% is out of reach at any practical budget"]
fn scalar_simulation_matches_geometric_series() {
    let (p, k) = scalar_sim_case();
    let cfg = SimConfig::new(250_000, 8, 2024, SymMatrix::identity(1));
    let res = simulate(&p, &k, &cfg).unwrap();
    let expected = 1.0 / 0.15;
    let rel = (res.covariance.get(0, 0) - expected).abs() / expected;
    assert!(rel <= 0.05, "empirical {} vs {expected}", res.covariance.get(0, 0));
}

#[test]
fn scalar_case_has_infinite_fourth_moment() {
    let (p, k) = scalar_sim_case();
    let rho4 = fourth_moment_radius(&p, &k);
    assert!((rho4 - (0.2 * 16.0 + 0.8 * 0.25f64.powi(4))).abs() <= 1e-12);
    assert!(rho4 > 1.0);
}

#[test]
fn light_tailed_scalar_simulation_matches_geometric_series() {
    // same loop with nu = 0.95: rho = 0.259375, fourth-moment radius 0.8037
    let (p, k) = scalar_sim_case();
    let p = p.with_channels(ChannelSpec::new(vec![0.95]).unwrap()).unwrap();
    assert!(fourth_moment_radius(&p, &k) < 1.0);
    let cfg = SimConfig::new(125_000, 8, 2024, SymMatrix::identity(1));
    let res = simulate(&p, &k, &cfg).unwrap();
    let expected = 1.0 / (1.0 - 0.259375);
    let rel = (res.covariance.get(0, 0) - expected).abs() / expected;
    assert!(rel <= 0.05, "empirical {} vs {expected}", res.covariance.get(0, 0));
}

#[test]
fn classical_simulation_matches_lyapunov() {
    let mut r = rng(10);
    let p = random_plant(&mut r, 2, 1, 1.2, vec![1.0]);
    let k = solve_mare(&p, &SolverConfig::default()).unwrap().gain.unwrap();
    let q = SymMatrix::identity(2);
    let fp = covariance_fixed_point(&p, &k, &q).unwrap();
    let cfg = SimConfig::new(50_000, 4, 99, q);
    let res = simulate(&p, &k, &cfg).unwrap();
    assert!(res.samples >= 100_000);
    assert!(rel_diff(&res.covariance, &fp.sigma) <= 0.05);
}
