use approx::assert_relative_eq;
use proptest::prelude::*;

use super::closed::bpsk_k1_brackets;
use super::gamma::gamma_route;
use super::*;

fn quad() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn map1(l: f64) -> RsbLadder {
    RsbLadder::new(vec![l], Regime::Map).unwrap()
}

fn mmse(sizes: &[f64]) -> RsbLadder {
    RsbLadder::new(sizes.to_vec(), Regime::Mmse).unwrap()
}

const BPSK: ChannelSpec = ChannelSpec::BpskPrior { amplitude: 1.0 };

#[test]
fn awgn_scalar_conjugate() {
    let l = RsbLadder::replica_symmetric(Regime::Mmse);
    let p = meanvar_awgn(1.0, 0.0, &[1.0], &l, 1.0).unwrap();
    assert_relative_eq!(p.mean, 0.5, epsilon = 1e-15);
    assert_relative_eq!(p.c_hat[0], 0.5, epsilon = 1e-15);
}

#[test]
fn awgn_matches_quadrature_k1() {
    for regime in [Regime::Mmse, Regime::Map] {
        let l = RsbLadder::new(vec![4.0], regime).unwrap();
        let lv = ladder_to_levels(&[1.0, 3.0], &l);
        let c = meanvar_awgn(0.7, 0.2, &lv, &l, 0.1).unwrap();
        let ch = ChannelSpec::AwgnLikelihood { var: 0.1 };
        let q = meanvar_quadrature(&ch, Some(0.7), 0.2, &lv, &l, &quad()).unwrap();
        assert_relative_eq!(c.mean, q.mean, epsilon = 1e-8);
        for k in 0..2 {
            assert_relative_eq!(c.c_hat[k], q.c_hat[k], epsilon = 1e-8);
        }
    }
}

#[test]
fn awgn_uninformative_limit() {
    let l = mmse(&[2.0, 4.0]);
    let lv = [0.5, 0.25, 0.1];
    let p = meanvar_awgn(3.0, -0.4, &lv, &l, 1e9).unwrap();
    let c = levels_to_ladder(&lv, &l);
    assert_relative_eq!(p.mean, -0.4, epsilon = 1e-8);
    for k in 0..3 {
        assert_relative_eq!(p.c_hat[k], c[k], max_relative = 1e-8);
    }
}

#[test]
fn gaussian_closure_every_depth() {
    let ch = ChannelSpec::GaussianPrior {
        mean: 0.3,
        var: 0.8,
    };
    let cases: [(RsbLadder, Vec<f64>); 4] = [
        (mmse(&[]), vec![0.6]),
        (mmse(&[3.0]), vec![0.6, 0.2]),
        (map1(2.0), vec![0.6, 0.2]),
        (mmse(&[2.0, 6.0]), vec![0.6, 0.2, 0.05]),
    ];
    for (l, lv) in cases {
        let c = meanvar_gaussian_prior(0.3, 0.8, -0.9, &lv, &l).unwrap();
        let q = meanvar_quadrature(&ch, None, -0.9, &lv, &l, &quad()).unwrap();
        assert_relative_eq!(c.mean, q.mean, epsilon = 1e-10);
        for k in 0..lv.len() {
            assert_relative_eq!(c.c_hat[k], q.c_hat[k], epsilon = 1e-10);
        }
    }
}

#[test]
fn bpsk_single_level_is_tanh() {
    let l = mmse(&[]);
    let q = meanvar_quadrature(&BPSK, None, 0.5, &[1.0], &l, &quad()).unwrap();
    assert_relative_eq!(q.mean, 0.5f64.tanh(), epsilon = 1e-15);
    // two-atom enumeration
    let w = |x: f64| (-(x - 0.5f64).powi(2) / 2.0).exp();
    let mean = (w(1.0) - w(-1.0)) / (w(1.0) + w(-1.0));
    assert_relative_eq!(q.mean, mean, epsilon = 1e-15);
    assert_relative_eq!(q.c_hat[0], 1.0 - mean * mean, epsilon = 1e-14);
}

#[test]
fn bpsk_k1_symmetry_and_saturation() {
    let p = meanvar_bpsk_k1(0.0, 0.5, 0.2, 4.0, 1.0).unwrap();
    assert!(p.mean.abs() < 1e-15);
    let mu = 20.0 * (0.5f64 + 4.0 * 0.2).sqrt();
    let p = meanvar_bpsk_k1(mu, 0.5, 0.2, 4.0, 1.0).unwrap();
    assert!((p.mean - 1.0).abs() < 1e-6);
    let p = meanvar_bpsk_k1(-1e4, 0.5, 0.2, 4.0, 1.0).unwrap();
    assert!(p.mean.is_finite() && (p.mean + 1.0).abs() < 1e-6);
}

/// `g_1` evaluated directly from its definition as a one-dimensional
/// integral, independent of the closed form.
fn g_direct(mu: f64, v0: f64, v1: f64, l: f64) -> f64 {
    let r = crate::quadrature::gauss_legendre(200);
    let (lo, hi) = (mu - 14.0 * v1.sqrt() - 2.0, mu + 14.0 * v1.sqrt() + 2.0);
    let mut s = 0.0;
    // split at the kink of |m|
    for (a, b) in [(lo, 0.0f64.min(hi)), (0.0f64.max(lo), hi)] {
        if b <= a {
            continue;
        }
        for (&x, &w) in r.nodes.iter().zip(&r.weights) {
            let m = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let f0 = -(m.abs() - 1.0).powi(2) / (2.0 * v0);
            s += 0.5 * (b - a) * w * (crate::special::log_gauss(m, mu, v1) + l * f0).exp();
        }
    }
    s.ln() / l
}

#[test]
fn bpsk_k1_matches_finite_differences_of_g() {
    let (mu, v0, v1, l) = (0.3, 0.5, 0.2, 4.0);
    let p = meanvar_bpsk_k1(mu, v0, v1, l, 1.0).unwrap();
    assert_relative_eq!(
        p.log_partition.unwrap(),
        g_direct(mu, v0, v1, l),
        epsilon = 1e-12
    );
    let h = 1e-4;
    let d = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let g_mu = d(&|m| g_direct(m, v0, v1, l), mu);
    let g_v0 = d(&|x| g_direct(mu, x, v1, l), v0);
    let g_v1 = d(&|x| g_direct(mu, v0, x, l), v1);
    let c1 = v0 + l * v1;
    assert_relative_eq!(p.mean, c1 * g_mu + mu, epsilon = 1e-6);
    let gamma1 = -2.0 * g_v1 + l * g_mu * g_mu;
    let gamma0 = -2.0 * (g_v1 - l * g_v0);
    assert_relative_eq!((c1 - p.c_hat[1]) / (c1 * c1), gamma1, epsilon = 1e-6);
    assert_relative_eq!((v0 - p.c_hat[0]) / (v0 * v0), gamma0, epsilon = 1e-6);
}

#[test]
fn bpsk_k1_derivative_and_bracket_forms_agree() {
    for &(mu, v0, v1, l) in &[
        (0.3, 0.5, 0.2, 4.0),
        (-1.7, 0.05, 0.3, 2.0),
        (0.01, 1.5, 0.01, 8.0),
        (4.0, 0.2, 0.2, 0.5),
    ] {
        let d = meanvar_bpsk_k1(mu, v0, v1, l, 1.0).unwrap();
        let b = bpsk_k1_brackets(mu, v0, v1, l, 1.0);
        assert_relative_eq!(d.mean, b.mean, epsilon = 1e-12);
        assert_relative_eq!(
            d.log_partition.unwrap(),
            b.log_partition.unwrap(),
            epsilon = 1e-12
        );
        for k in 0..2 {
            assert!(
                (d.c_hat[k] - b.c_hat[k]).abs() < 1e-10,
                "{k}: {:?} vs {:?}",
                d.c_hat,
                b.c_hat
            );
        }
    }
}

#[test]
fn bpsk_k1_closed_vs_quadrature() {
    for &(mu, v0, v1, l) in &[
        (0.3, 0.5, 0.2, 4.0),
        (-1.1, 0.05, 0.3, 2.0),
        (0.0, 0.3, 0.1, 4.0),
        (2.5, 0.01, 0.5, 16.0),
    ] {
        let lad = map1(l);
        let c = meanvar_bpsk_k1(mu, v0, v1, l, 1.0).unwrap();
        let q = meanvar_quadrature(&BPSK, None, mu, &[v0, v1], &lad, &quad()).unwrap();
        assert_relative_eq!(c.mean, q.mean, epsilon = 1e-6);
        for k in 0..2 {
            assert_relative_eq!(c.c_hat[k], q.c_hat[k], epsilon = 1e-6);
        }
    }
}

#[test]
fn bpsk_mmse_binomial_vs_quadrature() {
    for &(mu, v0, v1, l) in &[
        (0.3, 0.5, 0.2, 4.0),
        (-0.8, 0.1, 0.4, 2.0),
        (1.2, 0.3, 0.05, 6.0),
    ] {
        let lad = mmse(&[l]);
        let d = Denoiser::new(BPSK, lad.clone(), quad()).unwrap();
        let c = d.meanvar(None, mu, &[v0, v1]).unwrap();
        let q = meanvar_quadrature(&BPSK, None, mu, &[v0, v1], &lad, &quad()).unwrap();
        assert_relative_eq!(c.mean, q.mean, epsilon = 1e-10);
        for k in 0..2 {
            assert_relative_eq!(c.c_hat[k], q.c_hat[k], epsilon = 1e-10);
        }
    }
}

#[test]
fn bpsk_k2_hybrid_vs_full_quadrature() {
    for regime in [Regime::Map, Regime::Mmse] {
        let lad = RsbLadder::new(vec![2.0, 4.0], regime).unwrap();
        let lv = [0.3, 0.1, 0.05];
        let d = Denoiser::new(BPSK, lad.clone(), quad()).unwrap();
        let h = d.meanvar(None, 0.4, &lv).unwrap();
        let q = meanvar_quadrature(&BPSK, None, 0.4, &lv, &lad, &quad()).unwrap();
        assert_relative_eq!(h.mean, q.mean, epsilon = 1e-8);
        for k in 0..3 {
            assert_relative_eq!(h.c_hat[k], q.c_hat[k], epsilon = 1e-8);
        }
    }
}

#[test]
fn gamma_route_awgn_and_bpsk() {
    let awgn = ChannelSpec::AwgnLikelihood { var: 0.1 };
    let e = gamma_route_check(&awgn, Some(0.7), 0.2, &[1.0, 0.5], &mmse(&[4.0]), &quad()).unwrap();
    assert!(e <= 1e-5, "awgn K=1: {e}");
    let e = gamma_route_check(&BPSK, None, 0.3, &[0.5, 0.2], &map1(4.0), &quad()).unwrap();
    assert!(e <= 1e-5, "bpsk map K=1: {e}");
    let e = gamma_route_check(&BPSK, None, -0.6, &[0.4, 0.1], &mmse(&[4.0]), &quad()).unwrap();
    assert!(e <= 1e-5, "bpsk mmse K=1: {e}");
    let e = gamma_route_check(
        &BPSK,
        None,
        0.2,
        &[0.4, 0.1, 0.05],
        &RsbLadder::new(vec![2.0, 4.0], Regime::Map).unwrap(),
        &quad(),
    )
    .unwrap();
    assert!(e <= 1e-5, "bpsk map K=2: {e}");
    let relaxed = ChannelSpec::RelaxedBpskPrior { relax: 0.05 };
    let e = gamma_route_check(&relaxed, None, 0.2, &[0.4, 0.1], &mmse(&[3.0]), &quad()).unwrap();
    assert!(e <= 1e-5, "relaxed mmse K=1: {e}");
}

#[test]
fn gamma_route_single_level() {
    let awgn = ChannelSpec::AwgnLikelihood { var: 0.3 };
    let e = gamma_route_check(&awgn, Some(-0.4), 0.9, &[0.7], &mmse(&[]), &quad()).unwrap();
    assert!(e <= 1e-8, "{e}");
    let e = gamma_route_check(
        &awgn,
        Some(-0.4),
        0.9,
        &[0.7],
        &RsbLadder::replica_symmetric(Regime::Map),
        &quad(),
    )
    .unwrap();
    assert!(e <= 1e-8, "{e}");
}

#[test]
fn gamma_route_rejects_unit_first_size() {
    let r = gamma_route(&BPSK, None, 0.1, &[0.5, 0.2], &mmse(&[1.0]), &quad());
    assert!(matches!(r, Err(Error::Unsupported(_))));
}

#[test]
fn relaxed_prior_kernels_match_quadrature_of_definition() {
    // K = 0 relaxed MMSE posterior against brute integration over x
    let c = 0.05;
    let ch = ChannelSpec::RelaxedBpskPrior { relax: c };
    let (m, v) = (0.35, 0.2);
    let r = crate::quadrature::gauss_legendre(400);
    let (mut z, mut x1, mut x2) = (0.0, 0.0, 0.0);
    for (a, b) in [(-4.0, 0.0), (0.0, 4.0)] {
        for (&t, &w) in r.nodes.iter().zip(&r.weights) {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let p = (-(x - m).powi(2) / (2.0 * v) - (f64::abs(x) - 1.0).powi(2) / (2.0 * c)).exp()
                * 0.5
                * (b - a)
                * w;
            z += p;
            x1 += p * x;
            x2 += p * x * x;
        }
    }
    let d = Denoiser::new(ch, mmse(&[]), quad()).unwrap();
    let p = d.meanvar(None, m, &[v]).unwrap();
    assert_relative_eq!(p.mean, x1 / z, epsilon = 1e-12);
    assert_relative_eq!(p.c_hat[0], x2 / z - (x1 / z).powi(2), epsilon = 1e-12);
    // MAP: the proximal point and its slope
    let d = Denoiser::new(ch, RsbLadder::replica_symmetric(Regime::Map), quad()).unwrap();
    let p = d.meanvar(None, m, &[v]).unwrap();
    assert_relative_eq!(p.mean, (v + c * m) / (v + c), epsilon = 1e-15);
    assert_relative_eq!(p.c_hat[0], v * c / (v + c), epsilon = 1e-15);
}

#[test]
fn degenerate_surveys_collapse_to_single_level() {
    let cases = [
        (BPSK, Regime::Map, 0.7),
        (BPSK, Regime::Mmse, -0.3),
        (
            ChannelSpec::RelaxedBpskPrior { relax: 0.01 },
            Regime::Mmse,
            0.4,
        ),
        (
            ChannelSpec::RelaxedBpskPrior { relax: 0.01 },
            Regime::Map,
            -0.8,
        ),
    ];
    for (ch, regime, mu) in cases {
        let single = Denoiser::new(ch, RsbLadder::replica_symmetric(regime), quad())
            .unwrap()
            .meanvar(None, mu, &[0.4])
            .unwrap();
        for sizes in [vec![4.0], vec![2.0, 4.0]] {
            let lad = RsbLadder::new(sizes.clone(), regime).unwrap();
            let mut lv = vec![0.4];
            lv.extend(sizes.iter().map(|_| 1e-13));
            let d = Denoiser::new(ch, lad, quad()).unwrap();
            let p = d.meanvar(None, mu, &lv).unwrap();
            assert!(
                (p.mean - single.mean).abs() < 1e-8,
                "{ch:?} {regime:?} {sizes:?}: {} vs {}",
                p.mean,
                single.mean
            );
            for k in 0..lv.len() {
                assert!(
                    (p.c_hat[k] - single.c_hat[0]).abs() < 1e-8,
                    "{ch:?} {regime:?} {k}: {:?} vs {}",
                    p.c_hat,
                    single.c_hat[0]
                );
            }
        }
    }
}

#[test]
fn tolerance_refinement_is_stable() {
    let lad = RsbLadder::new(vec![2.0, 4.0], Regime::Map).unwrap();
    let lv = [0.3, 0.1, 0.05];
    let a = meanvar_quadrature(&BPSK, None, 0.4, &lv, &lad, &quad()).unwrap();
    let fine = QuadratureConfig {
        tol: 1e-14,
        ..quad()
    };
    let b = meanvar_quadrature(&BPSK, None, 0.4, &lv, &lad, &fine).unwrap();
    assert!((a.mean - b.mean).abs() < 1e-7);
    for k in 0..3 {
        assert!((a.c_hat[k] - b.c_hat[k]).abs() < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn awgn_translation_equivariance(y in -3.0..3.0f64, mu in -3.0..3.0f64, d in -5.0..5.0f64,
                                     v0 in 0.05..2.0f64, v1 in 0.0..1.0f64) {
        let l = mmse(&[4.0]);
        let a = meanvar_awgn(y, mu, &[v0, v1], &l, 0.3).unwrap();
        let b = meanvar_awgn(y + d, mu + d, &[v0, v1], &l, 0.3).unwrap();
        prop_assert!((b.mean - a.mean - d).abs() < 1e-12);
        prop_assert_eq!(a.c_hat, b.c_hat);
    }

    #[test]
    fn ladders_are_monotone(mu in -3.0..3.0f64, v0 in 0.01..2.0f64, v1 in 0.0..1.0f64, v2 in 0.0..1.0f64,
                            which in 0usize..4, map in any::<bool>()) {
        let regime = if map { Regime::Map } else { Regime::Mmse };
        let ch = [BPSK, ChannelSpec::RelaxedBpskPrior { relax: 0.02 },
                  ChannelSpec::GaussianPrior { mean: 0.0, var: 1.0 }, BPSK][which];
        let sizes = if which == 3 { vec![2.0, 4.0] } else { vec![4.0] };
        let mut lv = vec![v0, v1];
        if which == 3 { lv.push(v2); }
        let d = Denoiser::new(ch, RsbLadder::new(sizes, regime).unwrap(), quad()).unwrap();
        let p = d.meanvar(None, mu, &lv).unwrap();
        prop_assert!(p.c_hat[0] >= 0.0);
        for k in 1..p.c_hat.len() {
            prop_assert!(p.c_hat[k] >= p.c_hat[k - 1]);
        }
    }
}
