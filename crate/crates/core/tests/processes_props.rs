use local_dsm::numcore::{euler_maruyama, RngStream};
use local_dsm::objectives::mean_stderr;
use local_dsm::processes::{
    ActiveSwimmer, BetaSchedule, Dataset, Ips, IpsParams, Langevin, Prior, RepulsionConvention,
    VpSde,
};
use local_dsm::DiffusionProcess;
use proptest::prelude::*;

fn zoo() -> Vec<(&'static str, Box<dyn DiffusionProcess>)> {
    let mog = Prior::Mog {
        mu1: -1.0,
        mu2: 1.0,
        var: 0.5,
    };
    vec![
        ("vpsde", Box::new(VpSde::new(3, 0.1, 20.0).unwrap())),
        (
            "langevin_mog",
            Box::new(Langevin::new(2, mog, BetaSchedule::linear(0.1, 10.0)).unwrap()),
        ),
        (
            "langevin_logistic",
            Box::new(Langevin::new(2, Prior::Logistic, BetaSchedule::linear(0.1, 10.0)).unwrap()),
        ),
        (
            "langevin_cosine",
            Box::new(
                Langevin::new(
                    1,
                    Prior::standard_normal(),
                    BetaSchedule::Cosine {
                        offset: 0.1,
                        beta_max: 1e3,
                    },
                )
                .unwrap(),
            ),
        ),
        ("swimmer", Box::new(ActiveSwimmer::new(0.1, 1.0).unwrap())),
        ("ips", Box::new(Ips::new(IpsParams::default()).unwrap())),
        (
            "ips_half_width",
            Box::new(
                Ips::new(IpsParams {
                    n: 3,
                    ips_exponent_convention: RepulsionConvention::HalfWidth,
                    ..IpsParams::default()
                })
                .unwrap(),
            ),
        ),
    ]
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_and_time_derivative_match_central_differences(
        seed in any::<u64>(),
        t in 0.05..0.9f64,
    ) {
        let h = 1e-5;
        for (name, p) in zoo() {
            let d = p.dim();
            let mut rng = RngStream::new(seed, 0);
            let y: Vec<f64> = (0..d).map(|_| 1.5 * rng.normal()).collect();
            let jac = p.drift_jacobian(&y, t);
            for j in 0..d {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let fp = p.drift_vec(&yp, t);
                let fm = p.drift_vec(&ym, t);
                for i in 0..d {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    prop_assert!(rel_close(jac[(i, j)], fd, 1e-4), "{name} J[{i},{j}] {} vs {fd}", jac[(i, j)]);
                }
            }
            let mut dt = vec![0.0; d];
            p.drift_time_derivative(&y, t, &mut dt);
            let fp = p.drift_vec(&y, t + h);
            let fm = p.drift_vec(&y, t - h);
            for i in 0..d {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                prop_assert!(rel_close(dt[i], fd, 1e-4), "{name} ∂t f[{i}] {} vs {fd}", dt[i]);
            }
            prop_assert!(rel_close(p.drift_divergence(&y, t), jac.trace(), 1e-8));
        }
    }

    #[test]
    fn diffusion_integral_is_additive_and_nonnegative(
        a in 0.0..0.95f64,
        b in 0.0..0.95f64,
        c in 0.0..0.95f64,
    ) {
        let mut ts = [a, b, c];
        ts.sort_by(f64::total_cmp);
        let [s, u, t] = ts;
        for (name, p) in zoo() {
            let whole = p.diffusion_sq_integral_vec(s, t);
            let left = p.diffusion_sq_integral_vec(s, u);
            let right = p.diffusion_sq_integral_vec(u, t);
            for i in 0..p.dim() {
                prop_assert!(whole[i] >= 0.0);
                prop_assert!((left[i] + right[i] - whole[i]).abs() < 1e-10 * (1.0 + whole[i]), "{name}");
            }
            prop_assert!(p.diffusion_sq_vec(u).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn swimmer_drift_is_exactly_odd(x in -20.0..20.0f64, v in -20.0..20.0f64) {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        let f = p.drift_vec(&[x, v], 0.0);
        let g = p.drift_vec(&[-x, -v], 0.0);
        prop_assert_eq!(f[0], -g[0]);
        prop_assert_eq!(f[1], -g[1]);
    }

    #[test]
    fn ips_drift_is_permutation_equivariant(seed in any::<u64>(), t in 0.0..10.0f64) {
        let p = Ips::new(IpsParams::default()).unwrap();
        let n = 5;
        let mut rng = RngStream::new(seed, 1);
        let y: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.normal()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let py: Vec<f64> = perm.iter().flat_map(|&k| [y[2 * k], y[2 * k + 1]]).collect();
        let f = p.drift_vec(&y, t);
        let pf = p.drift_vec(&py, t);
        let jac = p.drift_jacobian(&y, t);
        let pjac = p.drift_jacobian(&py, t);
        for (a, &k) in perm.iter().enumerate() {
            for c in 0..2 {
                prop_assert!((pf[2 * a + c] - f[2 * k + c]).abs() < 1e-12 * (1.0 + f[2 * k + c].abs()));
            }
            for (b, &l) in perm.iter().enumerate() {
                for c in 0..2 {
                    for e in 0..2 {
                        let x = pjac[(2 * a + c, 2 * b + e)];
                        let z = jac[(2 * k + c, 2 * l + e)];
                        prop_assert!((x - z).abs() < 1e-12 * (1.0 + z.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn prior_score_is_gradient_of_log_density(x in -6.0..6.0f64) {
        let h = 1e-5;
        for prior in [
            Prior::standard_normal(),
            Prior::Gaussian { mean: 0.5, var: 2.0 },
            Prior::Mog { mu1: -1.0, mu2: 1.0, var: 0.5 },
            Prior::Mog { mu1: -0.5, mu2: 0.5, var: 0.5 },
            Prior::Logistic,
        ] {
            let fd = (prior.log_density_1d(x + h) - prior.log_density_1d(x - h)) / (2.0 * h);
            prop_assert!((prior.score_1d(x) - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{prior:?}");
            let fd2 = (prior.score_1d(x + h) - prior.score_1d(x - h)) / (2.0 * h);
            prop_assert!((prior.score_derivative_1d(x) - fd2).abs() < 1e-5 * (1.0 + fd2.abs()));
        }
    }
}

#[test]
fn langevin_leaves_its_prior_invariant() {
    let n = 10_000;
    for prior in [
        Prior::Mog {
            mu1: -1.0,
            mu2: 1.0,
            var: 0.5,
        },
        Prior::Logistic,
    ] {
        let p = Langevin::new(1, prior, BetaSchedule::linear(0.1, 1.0)).unwrap();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let mut rng = RngStream::new(21, i);
            let mut y0 = [0.0];
            prior.sample(&mut rng, &mut y0);
            let y = euler_maruyama(&p, &y0, 0.0, 1.0, 1000, &mut rng).unwrap()[0];
            first.push(y);
            second.push(y * y);
        }
        let (m1, s1) = mean_stderr(&first);
        let (m2, s2) = mean_stderr(&second);
        assert!((m1 - prior.mean_1d()).abs() < 3.0 * s1, "{prior:?} mean {m1} ± {s1}");
        let ex2 = prior.variance_1d() + prior.mean_1d().powi(2);
        assert!((m2 - ex2).abs() < 3.0 * s2, "{prior:?} second moment {m2} ± {s2} vs {ex2}");
    }
}

#[test]
fn prior_samplers_match_analytic_moments() {
    let n = 100_000;
    for prior in [
        Prior::Gaussian {
            mean: 0.5,
            var: 2.0,
        },
        Prior::Mog {
            mu1: -1.0,
            mu2: 1.0,
            var: 0.5,
        },
        Prior::Logistic,
    ] {
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..n).map(|_| prior.sample_1d(&mut rng)).collect();
        let (m, se) = mean_stderr(&xs);
        assert!((m - prior.mean_1d()).abs() < 3.0 * se);
        let sq: Vec<f64> = xs.iter().map(|x| (x - prior.mean_1d()).powi(2)).collect();
        let (v, sv) = mean_stderr(&sq);
        assert!((v - prior.variance_1d()).abs() < 3.0 * sv, "{prior:?} {v} ± {sv}");
    }
}

#[test]
fn checkerboard_support_mean_and_marginal() {
    let ds = Dataset::Checkerboard;
    let n = 100_000;
    let mut rng = RngStream::new(8, 0);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| ds.sample_vec(&mut rng)).collect();
    assert!(xs.iter().all(|x| ds.in_support(x)));
    for c in 0..2 {
        let v: Vec<f64> = xs.iter().map(|x| x[c]).collect();
        let (m, se) = mean_stderr(&v);
        assert!(m.abs() < 3.0 * se);
    }
    // Eight unit-width bins on the x marginal, each with probability 1/8.
    let mut counts = [0usize; 8];
    for x in &xs {
        counts[((x[0] + 4.0).floor() as usize).min(7)] += 1;
    }
    let p = 1.0 / 8.0;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    for c in counts {
        assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "{counts:?}");
    }
}
