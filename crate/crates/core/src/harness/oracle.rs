//! Exhaustive postulated posterior at desk scale.

use nalgebra::DVector;

use crate::channels::{ChannelSpec, Regime};
use crate::ensembles::ProblemInstance;
use crate::error::{Error, Result};
use crate::kvasp::Channels;

use super::config::BRUTE_FORCE_MAX_N;

/// Residuals drift under incremental updates; rebuild them this often.
const REFRESH: u64 = 1024;

/// The postulated posterior estimate by enumeration of all `2^N` sign
/// vectors of a BPSK prior under an AWGN likelihood: the posterior mean for
/// [`Regime::Mmse`], the most probable configuration for [`Regime::Map`]
/// (ties resolved toward the first one visited).
///
/// Configurations are visited in Gray-code order, so each step flips one
/// coordinate and updates `y − Hx` by one column.
pub fn brute_force_posterior(
    instance: &ProblemInstance,
    channels: &Channels,
    regime: Regime,
) -> Result<DVector<f64>> {
    let n = instance.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Unsupported(format!(
            "exhaustive posterior needs N ≤ {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let a = match channels.prior {
        ChannelSpec::BpskPrior { amplitude } => amplitude,
        other => {
            return Err(Error::Unsupported(format!(
                "exhaustive posterior needs a BPSK prior, got {other}"
            )))
        }
    };
    let v = match channels.likelihood {
        ChannelSpec::AwgnLikelihood { var } => var,
        other => {
            return Err(Error::Unsupported(format!(
                "exhaustive posterior needs an AWGN likelihood, got {other}"
            )))
        }
    };
    let h = &instance.h;
    let mut x = DVector::from_element(n, -a);
    let mut r = &instance.y - h * &x;
    let energy = |r: &DVector<f64>| r.norm_squared() / (2.0 * v);

    // running log-sum-exp: weights are exp(−E − top)
    let mut top = f64::NEG_INFINITY;
    let mut z = 0.0;
    let mut acc = DVector::<f64>::zeros(n);
    let mut best = (f64::INFINITY, x.clone());

    let total = 1u64 << n;
    for step in 0..total {
        if step > 0 {
            let j = step.trailing_zeros() as usize;
            let old = x[j];
            x[j] = -old;
            if step % REFRESH == 0 {
                r = &instance.y - h * &x;
            } else {
                r.axpy(2.0 * old, &h.column(j), 1.0);
            }
        }
        let e = energy(&r);
        match regime {
            Regime::Map => {
                if e < best.0 {
                    best = (e, x.clone());
                }
            }
            Regime::Mmse => {
                let l = -e;
                if l > top {
                    let s = (top - l).exp();
                    z *= s;
                    acc *= s;
                    top = l;
                }
                let w = (l - top).exp();
                z += w;
                acc.axpy(w, &x, 1.0);
            }
        }
    }
    Ok(match regime {
        Regime::Map => best.1,
        Regime::Mmse => acc / z,
    })
}
