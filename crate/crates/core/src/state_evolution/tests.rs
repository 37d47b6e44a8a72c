use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::channels::{ChannelSpec, Regime};
use crate::ensembles::{build_measurement, gram_spectrum, EnsembleConfig};

const AWGN: ChannelSpec = ChannelSpec::AwgnLikelihood { var: 0.1 };
const BPSK: ChannelSpec = ChannelSpec::BpskPrior { amplitude: 1.0 };
const GAUSS: ChannelSpec = ChannelSpec::GaussianPrior {
    mean: 0.0,
    var: 1.0,
};

fn spectrum(n: usize, alpha: f64, seed: u64) -> Spectrum {
    let (_, lambda) = build_measurement(&EnsembleConfig {
        n,
        alpha,
        rho: 0.0,
        seed,
    })
    .unwrap();
    Spectrum::new(lambda, alpha).unwrap()
}

fn config(sizes: &[f64], regime: Regime) -> SeConfig {
    SeConfig::new(RsbLadder::new(sizes.to_vec(), regime).unwrap())
}

fn matched(prior: ChannelSpec) -> SeChannels {
    SeChannels::matched(Channels {
        prior,
        likelihood: AWGN,
    })
}

#[test]
fn init_examples() {
    let sp = spectrum(200, 2.0, 3);
    let ch = matched(BPSK);
    let s = se_init(&sp, &ch, &config(&[4.0], Regime::Map)).unwrap();
    assert_eq!(s.c_x, 1.0);
    assert!((s.c_z - 1.0).abs() < 0.05, "{}", s.c_z);
    assert_eq!(s.c_x_plus, vec![1.0, 2.0]);
    assert_relative_eq!(s.c_z_plus[1], 2.0 * sp.mean() / 2.0, max_relative = 1e-15);
    assert_eq!((s.d_hat_2x, s.f_hat_2x, s.f_hat_1z), (0.0, 0.0, 0.0));
    assert!(s.change.is_infinite());

    let mut cfg = config(&[4.0], Regime::Map);
    cfg.init = InitConvention::UnitNoise;
    let s = se_init(&sp, &ch, &cfg).unwrap();
    assert_relative_eq!(s.f_hat_2x, 0.25, max_relative = 1e-15);
    assert_relative_eq!(
        s.f_hat_1z,
        s.c_z / s.c_z_plus[1].powi(2),
        max_relative = 1e-15
    );
}

#[test]
fn init_convention_round_trips() {
    for c in [InitConvention::ZeroMean, InitConvention::UnitNoise] {
        assert_eq!(c.to_string().parse::<InitConvention>().unwrap(), c);
    }
    assert_eq!(
        "Unit-Noise".parse::<InitConvention>().unwrap(),
        InitConvention::UnitNoise
    );
    assert!("flat".parse::<InitConvention>().is_err());
}

#[test]
fn spectrum_validation_and_pooling() {
    assert!(Spectrum::new(vec![], 1.0).is_err());
    assert!(Spectrum::new(vec![1.0, -0.5], 1.0).is_err());
    assert!(Spectrum::new(vec![1.0], 0.0).is_err());
    let mk = |n: usize, alpha: f64, seed: u64| {
        let cfg = EnsembleConfig {
            n,
            alpha,
            rho: 0.0,
            seed,
        };
        let (h, lambda_samples) = build_measurement(&cfg).unwrap();
        let m = h.nrows();
        ProblemInstance {
            h,
            x0: DVector::zeros(n),
            z0: DVector::zeros(m),
            y: DVector::zeros(m),
            lambda_samples,
        }
    };
    let (a, b) = (mk(20, 2.0, 1), mk(20, 2.0, 2));
    let p = Spectrum::pooled([&a, &b]).unwrap();
    assert_eq!(p.lambda.len(), 40);
    assert!(p.lambda.windows(2).all(|w| w[0] <= w[1]));
    assert_relative_eq!(
        p.mean(),
        (a.mean_lambda() + b.mean_lambda()) / 2.0,
        max_relative = 1e-12
    );
    assert!(Spectrum::pooled([&a, &mk(20, 1.5, 3)]).is_err());
    assert!(Spectrum::pooled(std::iter::empty::<&ProblemInstance>()).is_err());
}

#[test]
fn mse_algebra() {
    // perfect estimate: D = F = C
    assert_eq!(mse_from_overlaps(2.0, 2.0, 2.0), 0.0);
    // zero estimate
    assert_eq!(mse_from_overlaps(2.0, 0.0, 0.0), 1.0);
    // estimate −x0
    assert_eq!(mse_from_overlaps(1.0, -1.0, 1.0), 4.0);
}

/// Scalar variance recursion of matched Gaussian VAMP written out by hand.
#[test]
fn gaussian_k0_follows_variance_recursion() {
    let sp = spectrum(120, 1.5, 5);
    let ch = matched(GAUSS);
    let mut cfg = config(&[], Regime::Mmse);
    cfg.iterations = 6;
    cfg.stop_tol = 0.0;
    let tr = se_run(&sp, &ch, &cfg).unwrap();
    let v = 0.1;
    let mut c_plus = 1.0;
    for &mse in &tr.mse {
        let c_hat_minus = sp
            .lambda
            .iter()
            .map(|l| 1.0 / (1.0 / c_plus + l / v))
            .sum::<f64>()
            / sp.lambda.len() as f64;
        let c_minus = 1.0 / (1.0 / c_hat_minus - 1.0 / c_plus);
        let c_hat_plus = 1.0 / (1.0 + 1.0 / c_minus);
        c_plus = 1.0 / (1.0 / c_hat_plus - 1.0 / c_minus);
        assert_relative_eq!(mse, c_hat_plus, max_relative = 1e-10);
    }
    // Nishimori: F = D under the matched posterior mean
    assert_relative_eq!(tr.state.f_x_plus, tr.state.d_x_plus, max_relative = 1e-10);
    assert_relative_eq!(tr.state.f_z_minus, tr.state.d_z_minus, max_relative = 1e-10);
}

#[test]
fn matched_bpsk_mmse_obeys_nishimori() {
    let sp = spectrum(80, 2.0, 9);
    let mut cfg = config(&[], Regime::Mmse);
    cfg.iterations = 8;
    let tr = se_run(&sp, &matched(BPSK), &cfg).unwrap();
    assert_relative_eq!(tr.state.f_x_plus, tr.state.d_x_plus, max_relative = 1e-8);
    assert_relative_eq!(tr.state.f_z_minus, tr.state.d_z_minus, max_relative = 1e-8);
    assert!(
        tr.mse.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        "{:?}",
        tr.mse
    );
}

#[test]
fn one_map_sweep_beats_the_zero_estimate() {
    let sp = spectrum(80, 2.0, 2);
    let mut cfg = config(&[4.0], Regime::Map);
    cfg.iterations = 1;
    let tr = se_run(&sp, &matched(BPSK), &cfg).unwrap();
    assert_eq!(tr.mse.len(), 1);
    assert!(tr.mse[0] < 1.0, "{}", tr.mse[0]);
}

#[test]
fn likelihood_measure_matches_tensor_rule() {
    let lad = RsbLadder::new(vec![3.0], Regime::Map).unwrap();
    let den = Denoiser::new(
        ChannelSpec::AwgnLikelihood { var: 0.2 },
        lad.clone(),
        QuadratureConfig::default(),
    )
    .unwrap();
    let truth = ChannelSpec::AwgnLikelihood { var: 0.05 };
    let c_in = [0.3, 0.7];
    let levels = ladder_to_levels(&c_in, &lad);
    for msg in [
        MessageStats {
            d_hat: 1.3,
            f_hat: 2.1,
        },
        MessageStats {
            d_hat: 0.0,
            f_hat: 0.0,
        },
    ] {
        let a = measure_z(&den, &truth, 1.4, &c_in, msg).unwrap();
        let b = measure_z_tensor(1.4, 0.05, &c_in, msg, 8, |y, mu| {
            den.meanvar(Some(y), mu, &levels)
        })
        .unwrap();
        assert_relative_eq!(a.d, b.d, max_relative = 1e-12);
        assert_relative_eq!(a.f, b.f, max_relative = 1e-12);
        for (x, y) in a.c_hat.iter().zip(&b.c_hat) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }
}

#[test]
fn awgn_message_is_its_own_extrinsic() {
    let lad = RsbLadder::new(vec![3.0], Regime::Mmse).unwrap();
    let den = Denoiser::new(
        ChannelSpec::AwgnLikelihood { var: 0.2 },
        lad,
        QuadratureConfig::default(),
    )
    .unwrap();
    let truth = ChannelSpec::AwgnLikelihood { var: 0.05 };
    let c_in = [0.3, 0.7];
    let msg = MessageStats {
        d_hat: 1.3,
        f_hat: 2.1,
    };
    let m = measure_z(&den, &truth, 1.4, &c_in, msg).unwrap();
    let generic = extrinsic(&m, 1.4, msg);
    let (ladder, exact) = awgn_extrinsic(&den, &truth, 2).unwrap();
    assert_eq!(ladder, vec![0.2, 0.2]);
    assert_relative_eq!(exact.d_hat, 5.0, max_relative = 1e-15);
    assert_relative_eq!(exact.f_hat, 1.25, max_relative = 1e-15);
    assert_relative_eq!(generic.d_hat, exact.d_hat, max_relative = 1e-10);
    assert_relative_eq!(generic.f_hat, exact.f_hat, max_relative = 1e-10);
    // the cavity of the posterior ladder is the noise level at every rung
    for (c, p) in c_in.iter().zip(&m.c_hat) {
        assert_relative_eq!(1.0 / (1.0 / p - 1.0 / c), 0.2, max_relative = 1e-10);
    }
}

/// `spectral` evaluated directly on a matrix with that spectrum: every
/// block quantity is a normalized trace of `A_k⁻¹ = (Diag(1/c_{x,k}) +
/// HᵀH/c_{z,k})⁻¹` against the signal and noise covariances.
#[test]
fn spectral_matches_dense_traces() {
    let (n, alpha) = (30, 1.5);
    let (h, _) = build_measurement(&EnsembleConfig {
        n,
        alpha,
        rho: 0.3,
        seed: 4,
    })
    .unwrap();
    let sp = Spectrum::new(gram_spectrum(&h), alpha).unwrap();
    let g = h.tr_mul(&h);
    let eye = DMatrix::<f64>::identity(n, n);
    let sets = [
        (
            [0.4, 0.9],
            [0.2, 0.5],
            LinearInputs {
                d_hat_x: 1.0,
                f_hat_x: 2.0,
                d_hat_z: 3.0,
                f_hat_z: 0.5,
            },
        ),
        (
            [1.0, 1.0],
            [0.1, 0.1],
            LinearInputs {
                d_hat_x: 0.0,
                f_hat_x: 0.0,
                d_hat_z: 10.0,
                f_hat_z: 10.0,
            },
        ),
        (
            [0.05, 0.3],
            [0.7, 2.0],
            LinearInputs {
                d_hat_x: 15.0,
                f_hat_x: 240.0,
                d_hat_z: 0.2,
                f_hat_z: 0.1,
            },
        ),
        (
            [2.0, 5.0],
            [0.01, 0.02],
            LinearInputs {
                d_hat_x: 0.3,
                f_hat_x: 0.4,
                d_hat_z: 50.0,
                f_hat_z: 80.0,
            },
        ),
        (
            [0.3, 0.31],
            [0.3, 0.6],
            LinearInputs {
                d_hat_x: 2.0,
                f_hat_x: 1.0,
                d_hat_z: 2.0,
                f_hat_z: 3.0,
            },
        ),
    ];
    let c0 = 1.3;
    let m = h.nrows() as f64;
    for (cx, cz, inp) in sets {
        let inv = |k: usize| (&eye / cx[k] + &g / cz[k]).try_inverse().unwrap();
        let a_k = inv(1);
        let signal = &eye * inp.d_hat_x + &g * inp.d_hat_z;
        let noise = &eye * inp.f_hat_x + &g * inp.f_hat_z;
        let x = spectral(&sp, Side::X, &cx, &cz, c0, inp);
        let z = spectral(&sp, Side::Z, &cx, &cz, c0, inp);
        for k in 0..2 {
            assert_relative_eq!(x.c_hat[k], inv(k).trace() / n as f64, max_relative = 1e-10);
            assert_relative_eq!(
                z.c_hat[k],
                (&h * inv(k) * h.transpose()).trace() / m,
                max_relative = 1e-10
            );
        }
        let post = &a_k * &signal;
        assert_relative_eq!(x.d, c0 * post.trace() / n as f64, max_relative = 1e-10);
        let f_dense = (c0 * &post * post.transpose() + &a_k * &noise * &a_k).trace() / n as f64;
        assert_relative_eq!(x.f, f_dense, max_relative = 1e-10);
        let zpost = &h * &post * h.transpose();
        assert_relative_eq!(z.d, c0 * zpost.trace() / m, max_relative = 1e-10);
        let zf = (&h * (c0 * &post * post.transpose() + &a_k * &noise * &a_k) * h.transpose())
            .trace()
            / m;
        assert_relative_eq!(z.f, zf, max_relative = 1e-10);
    }
}

#[test]
fn prior_measure_rules_agree() {
    let lad = RsbLadder::new(vec![4.0], Regime::Map).unwrap();
    let q = QuadratureConfig::default();
    let den = Denoiser::new(BPSK, lad.clone(), q).unwrap();
    let truth = ChannelSpec::RelaxedBpskPrior { relax: 0.01 };
    for (c_in, msg) in [
        (
            [0.05009, 0.0501],
            MessageStats {
                d_hat: 19.96,
                f_hat: 22.01,
            },
        ),
        (
            [0.4, 0.8],
            MessageStats {
                d_hat: 1.5,
                f_hat: 2.0,
            },
        ),
    ] {
        let levels = ladder_to_levels(&c_in, &lad);
        let jumps = den.jump_points(&levels);
        let run = |rule| {
            measure_x(&truth, true, &c_in, msg, &jumps, &q, rule, |mu| {
                den.meanvar(None, mu, &levels)
            })
            .unwrap()
        };
        let (a, b) = (run(XiRule::Fixed), run(XiRule::Adaptive));
        assert_relative_eq!(a.d, b.d, max_relative = 1e-9);
        assert_relative_eq!(a.f, b.f, max_relative = 1e-9);
        for (x, y) in a.c_hat.iter().zip(&b.c_hat) {
            assert_relative_eq!(x, y, max_relative = 1e-7);
        }
        // folding the symmetric prior changes nothing but the cost
        let c = measure_x(&truth, false, &c_in, msg, &jumps, &q, XiRule::Fixed, |mu| {
            den.meanvar(None, mu, &levels)
        })
        .unwrap();
        assert_relative_eq!(a.f, c.f, max_relative = 1e-12);
    }
}

#[test]
fn degenerate_message_is_rejected() {
    let lad = RsbLadder::replica_symmetric(Regime::Mmse);
    let q = QuadratureConfig::default();
    let den = Denoiser::new(BPSK, lad, q).unwrap();
    let r = measure_x(
        &BPSK,
        true,
        &[1.0],
        MessageStats {
            d_hat: 1.0,
            f_hat: 0.0,
        },
        &[],
        &q,
        XiRule::Fixed,
        |mu| den.meanvar(None, mu, &[1.0]),
    );
    assert!(r.is_err());
}

fn converged_gaussian() -> (SeTrace, Spectrum, SeChannels, SeConfig) {
    let sp = spectrum(60, 2.0, 8);
    let ch = matched(GAUSS);
    let mut cfg = config(&[], Regime::Mmse);
    cfg.iterations = 200;
    cfg.stop_tol = 1e-13;
    let tr = se_run(&sp, &ch, &cfg).unwrap();
    (tr, sp, ch, cfg)
}

#[test]
fn saddle_certifies_gaussian_fixed_point() {
    let (tr, sp, ch, cfg) = converged_gaussian();
    assert!(tr.converged);
    let rep = saddle_residual(&tr.state, &sp, &ch, &cfg).unwrap();
    assert!(rep.max_scaled() <= 1e-8, "{:?}", rep.worst());
    assert!(rep.residuals.len() > 30);
}

#[test]
fn saddle_flags_a_perturbed_state() {
    let (tr, sp, ch, cfg) = converged_gaussian();
    let mut s = tr.state.clone();
    s.d_hat_1x += 0.1;
    let rep = saddle_residual(&s, &sp, &ch, &cfg).unwrap();
    assert!(rep.max_scaled() > 1e-3, "{:?}", rep.worst());
}

#[test]
fn saddle_requires_convergence() {
    let (tr, sp, ch, cfg) = converged_gaussian();
    let mut s = tr.state;
    s.change = 1e-6;
    assert!(matches!(
        saddle_residual(&s, &sp, &ch, &cfg),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn non_awgn_likelihood_is_unsupported() {
    let sp = spectrum(20, 2.0, 1);
    let ch = SeChannels {
        truth: Channels {
            prior: BPSK,
            likelihood: AWGN,
        },
        postulated: Channels {
            prior: BPSK,
            likelihood: AWGN,
        },
    };
    let mut bad = ch;
    bad.truth.likelihood = BPSK;
    assert!(se_run(&sp, &bad, &config(&[], Regime::Mmse)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stable_extrinsic_agrees_with_generic(
        cx0 in 0.05f64..2.0, dcx in 0.0f64..2.0,
        cz0 in 0.05f64..2.0, dcz in 0.0f64..2.0,
        dx in 0.0f64..5.0, fx in 0.0f64..5.0, dz in 0.0f64..5.0, fz in 0.0f64..5.0,
        seed in 0u64..4,
    ) {
        let sp = spectrum(16, 1.5, seed);
        let cx = [cx0, cx0 + dcx];
        let cz = [cz0, cz0 + dcz];
        let inp = LinearInputs { d_hat_x: dx, f_hat_x: fx, d_hat_z: dz, f_hat_z: fz };
        let a = spectral_extrinsic(&sp, &cx, &cz, 1.0, inp);
        let b = extrinsic(&spectral(&sp, Side::X, &cx, &cz, 1.0, inp), 1.0, MessageStats { d_hat: dx, f_hat: fx });
        prop_assert!(a.f_hat >= 0.0);
        prop_assert!((a.d_hat - b.d_hat).abs() <= 1e-9 * (1.0 + b.d_hat.abs()));
        prop_assert!((a.f_hat - b.f_hat).abs() <= 1e-8 * (1.0 + b.f_hat.abs() + fx));
    }

    #[test]
    fn mse_is_zero_only_at_the_truth(c in 0.1f64..4.0, d in -4.0f64..4.0) {
        // F ≥ D²/C for any estimator, with equality for a scaled truth
        let f = d * d / c;
        let m = mse_from_overlaps(c, d, f);
        prop_assert!(m >= -1e-12);
        prop_assert!((m - (1.0 - d / c).powi(2)).abs() < 1e-9);
    }
}
