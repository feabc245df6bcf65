use local_dsm::numcore::sde::AdaptiveSdeOptions;
use local_dsm::numcore::{
    adaptive_sde_sample, euler_maruyama, mat_exp, ode_solve, sqrtm_spd, Matrix, RngStream,
};
use local_dsm::processes::{BetaSchedule, VpSde};
use proptest::prelude::*;

fn matrix(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, n * n)
        .prop_map(move |v| Matrix::from_row_slice(n, n, &v) * scale)
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_times_exp_of_negation_is_identity(m in (1usize..6).prop_flat_map(|n| matrix(n, 2.0))) {
        // Entries in [−2, 2] keep the 1-norm at most 10 for n ≤ 5.
        let n = m.nrows();
        let prod = mat_exp(&m).unwrap() * mat_exp(&(-&m)).unwrap();
        prop_assert!(max_abs(&(prod - Matrix::identity(n, n))) < 1e-8);
    }

    #[test]
    fn exp_of_block_diagonal_is_block_diagonal(a in matrix(2, 3.0), b in matrix(3, 3.0)) {
        let mut m = Matrix::zeros(5, 5);
        m.view_mut((0, 0), (2, 2)).copy_from(&a);
        m.view_mut((2, 2), (3, 3)).copy_from(&b);
        let e = mat_exp(&m).unwrap();
        let ea = mat_exp(&a).unwrap();
        let eb = mat_exp(&b).unwrap();
        let scale = 1.0 + max_abs(&e);
        prop_assert!(max_abs(&(e.view((0, 0), (2, 2)) - &ea)) < 1e-12 * scale);
        prop_assert!(max_abs(&(e.view((2, 2), (3, 3)) - &eb)) < 1e-12 * scale);
        prop_assert!(max_abs(&e.view((0, 2), (2, 3)).into_owned()) == 0.0);
        prop_assert!(max_abs(&e.view((2, 0), (3, 2)).into_owned()) == 0.0);
    }

    #[test]
    fn spd_root_is_symmetric_and_squares_back(m in (1usize..6).prop_flat_map(|n| matrix(n, 1.0))) {
        let n = m.nrows();
        let p = &m * m.transpose() + Matrix::identity(n, n) * 1e-3;
        let r = sqrtm_spd(&p).unwrap();
        prop_assert!(max_abs(&(&r.root - r.root.transpose())) < 1e-12);
        prop_assert!(max_abs(&(&r.root * &r.root - &p)) < 1e-9 * (1.0 + max_abs(&p)));
        let inv = r.inv_root.unwrap();
        prop_assert!(max_abs(&(&inv * &r.root - Matrix::identity(n, n))) < 1e-8);
    }

    #[test]
    fn euler_maruyama_is_bit_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let p = VpSde::new(2, 0.1, 20.0).unwrap();
        let a = euler_maruyama(&p, &[0.5, -1.0], 0.0, 1.0, 50, &mut RngStream::new(seed, stream)).unwrap();
        let b = euler_maruyama(&p, &[0.5, -1.0], 0.0, 1.0, 50, &mut RngStream::new(seed, stream)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn halving_ode_tolerance_never_increases_error() {
    // Rotation with decay: closed form e^{−t/2}(cos 3t, −sin 3t).
    let exact = |t: f64| [(-0.5 * t).exp() * (3.0 * t).cos(), -(-0.5 * t).exp() * (3.0 * t).sin()];
    let field = |_: f64, y: &[f64], out: &mut [f64]| {
        out[0] = -0.5 * y[0] + 3.0 * y[1];
        out[1] = -3.0 * y[0] - 0.5 * y[1];
    };
    let mut prev = f64::INFINITY;
    let mut tol = 1e-3;
    while tol > 1e-11 {
        let y = ode_solve(field, &[1.0, 0.0], 0.0, 2.0, tol).unwrap();
        let e = exact(2.0);
        let err = ((y[0] - e[0]).powi(2) + (y[1] - e[1]).powi(2)).sqrt();
        assert!(err <= prev, "tol {tol}: {err} > {prev}");
        prev = err;
        tol /= 2.0;
    }
    assert!(prev < 1e-9);
}

#[test]
fn vp_mean_ode_matches_closed_form() {
    let y = ode_solve(|_, y, out| out[0] = -y[0], &[1.0], 0.3, 0.8, 1e-10).unwrap();
    assert!((y[0] - (-0.5f64).exp()).abs() < 1e-9);
}

#[test]
fn ou_stationary_variance() {
    // dy = −y dt + √2 dw has unit stationary variance.
    let p = local_dsm::processes::Langevin::new(
        1,
        local_dsm::Prior::standard_normal(),
        BetaSchedule::Constant { beta: 1.0 },
    )
    .unwrap();
    let n = 20_000;
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = RngStream::new(3, i);
            euler_maruyama(&p, &[0.0], 0.0, 5.0, 500, &mut rng).unwrap()[0]
        })
        .collect();
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let (m, se) = local_dsm::objectives::mean_stderr(&sq);
    // Euler bias on the variance is 1/(1 − h/2) − 1 ≈ 0.005 at h = 0.01.
    assert!((m - 1.0 / (1.0 - 0.005)).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn adaptive_and_fixed_step_endpoint_means_agree_on_vp() {
    let p = VpSde::new(1, 0.1, 20.0).unwrap();
    let n = 10_000;
    let opts = AdaptiveSdeOptions::default();
    let mut diffs = Vec::with_capacity(n);
    let (mut a_vals, mut f_vals) = (Vec::new(), Vec::new());
    for i in 0..n as u64 {
        let a = adaptive_sde_sample(&p, &[2.0], 0.0, 0.5, &opts, &mut RngStream::new(11, i)).unwrap()[0];
        let f = euler_maruyama(&p, &[2.0], 0.0, 0.5, 500, &mut RngStream::new(12, i)).unwrap()[0];
        a_vals.push(a);
        f_vals.push(f);
        diffs.push(a - f);
    }
    let (d, se) = local_dsm::objectives::mean_stderr(&diffs);
    assert!(d.abs() < 3.0 * se, "{d} ± {se}");
    // Exact mean 2·exp(−½∫β).
    let exact = 2.0 * (-0.5 * BetaSchedule::linear(0.1, 20.0).integral(0.0, 0.5)).exp();
    let (ma, sa) = local_dsm::objectives::mean_stderr(&a_vals);
    assert!((ma - exact).abs() < 3.0 * sa + 2e-3, "{ma} vs {exact}");
}

#[test]
fn adaptive_without_noise_follows_the_drift_ode() {
    let p = local_dsm::processes::ActiveSwimmer::new(0.1, 1e-300).unwrap();
    let opts = AdaptiveSdeOptions {
        rtol: 1e-6,
        atol: 1e-8,
        ..AdaptiveSdeOptions::default()
    };
    let y = adaptive_sde_sample(&p, &[10.0, 0.0], 0.0, 5.0, &opts, &mut RngStream::new(1, 0)).unwrap();
    assert!(y[0].abs() < 3.0);
    let oracle = ode_solve(
        |t, y, out| local_dsm::DiffusionProcess::drift(&p, y, t, out),
        &[10.0, 0.0],
        0.0,
        5.0,
        1e-10,
    )
    .unwrap();
    assert!((y[0] - oracle[0]).abs() < 1e-3, "{} vs {}", y[0], oracle[0]);
}
