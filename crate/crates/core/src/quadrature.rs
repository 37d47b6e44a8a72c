//! Quadrature rules: Gauss–Hermite for Gaussian expectations, Gauss–Legendre
//! for finite intervals, and an adaptive Gauss–Kronrod integrator for tilted
//! one-dimensional measures evaluated in log domain.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knobs shared by every numerically integrated quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss–Hermite order of the outer (state-evolution) expectations.
    pub order: usize,
    /// Relative tolerance of the adaptive nested-bracket integrals.
    pub tol: f64,
    /// Upper bound on panels per adaptive integral.
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            order: 40,
            tol: 1e-12,
            max_panels: 4096,
        }
    }
}

/// Nodes and weights of a rule; weights sum to the measure's total mass.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch on a symmetric tridiagonal Jacobi matrix with zero diagonal.
fn golub_welsch(off: &[f64], mass: f64) -> Rule {
    let n = off.len() + 1;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for (i, &b) in off.iter().enumerate() {
        j[(i, i + 1)] = b;
        j[(i + 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetric rules: enforce exact antisymmetry of nodes
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Hermite rule for `E[f(ξ)]`, `ξ ~ N(0, 1)`.
pub fn gauss_hermite(order: usize) -> Rule {
    assert!(order >= 1);
    let off: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&off, 1.0)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Rule {
    assert!(order >= 1);
    let off: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

// Kronrod 15 / Gauss 7 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of [`integrate_tilted`]: `ln ∫ e^{w(m)} dm` and the normalized
/// averages of the value vector under `e^{w}`.
#[derive(Debug, Clone)]
pub struct Tilted {
    pub log_z: f64,
    pub means: Vec<f64>,
}

struct Panel {
    a: f64,
    b: f64,
    shift: f64,
    kron: Vec<f64>,
    gauss: Vec<f64>,
    abs: Vec<f64>,
}

fn eval_panel<F>(a: f64, b: f64, dim: usize, f: &mut F) -> Result<Panel>
where
    F: FnMut(f64, &mut [f64]) -> f64,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut lw = [0.0f64; 15];
    let mut vals = vec![0.0f64; 15 * dim];
    let mut xs = [0.0f64; 15];
    for i in 0..7 {
        xs[i] = c - h * XGK[i];
        xs[14 - i] = c + h * XGK[i];
    }
    xs[7] = c;
    for (i, &x) in xs.iter().enumerate() {
        lw[i] = f(x, &mut vals[i * dim..(i + 1) * dim]);
        if lw[i].is_nan() {
            return Err(Error::numeric(format!("log-weight is NaN at m = {x}")));
        }
    }
    let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut kron = vec![0.0; dim + 1];
    let mut gauss = vec![0.0; dim + 1];
    let mut abs = vec![0.0; dim + 1];
    if shift == f64::NEG_INFINITY {
        return Ok(Panel {
            a,
            b,
            shift,
            kron,
            gauss,
            abs,
        });
    }
    for (i, &x) in xs.iter().enumerate() {
        let _ = x;
        let j = if i < 7 { i } else { 14 - i };
        let wk = WGK[j] * h;
        // Gauss nodes are the odd Kronrod abscissae
        let wg = if j % 2 == 1 {
            WG[j / 2] * h
        } else if j == 7 {
            WG[3] * h
        } else {
            0.0
        };
        let e = (lw[i] - shift).exp();
        kron[0] += wk * e;
        gauss[0] += wg * e;
        abs[0] += wk * e;
        for d in 0..dim {
            let v = vals[i * dim + d] * e;
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite integrand value at m = {x}"
                )));
            }
            kron[d + 1] += wk * v;
            gauss[d + 1] += wg * v;
            abs[d + 1] += wk * v.abs();
        }
    }
    Ok(Panel {
        a,
        b,
        shift,
        kron,
        gauss,
        abs,
    })
}

/// Adaptive composite Gauss–Kronrod integration of `e^{w(m)}·[1, v(m)]` over
/// `[breaks[0], breaks[last]]`.
///
/// `f(m, out)` returns `w(m)` and writes `v(m)` (length `dim`) into `out`.
/// Interior `breaks` are kept as panel edges (kinks and jumps of the
/// integrand belong there); each break interval starts out split into panels
/// no wider than `width`. Panels are bisected until the summed Kronrod–Gauss
/// discrepancy of every component, relative to its absolute integral, drops
/// below `tol`.
pub fn integrate_tilted<F>(
    breaks: &[f64],
    width: f64,
    dim: usize,
    tol: f64,
    max_panels: usize,
    mut f: F,
) -> Result<Tilted>
where
    F: FnMut(f64, &mut [f64]) -> f64,
{
    if breaks.len() < 2 || !(width > 0.0) {
        return Err(Error::invalid(
            "integration domain needs two breaks and a positive width",
        ));
    }
    let lo = breaks[0];
    let hi = breaks[breaks.len() - 1];
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::numeric(format!(
            "degenerate integration domain [{lo}, {hi}]"
        )));
    }
    // keep the initial partition bounded
    let width = width.max(span / (max_panels as f64 / 4.0));
    let mut panels = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let n = ((b - a) / width).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for i in 0..n {
            let pa = a + h * i as f64;
            let pb = if i + 1 == n {
                b
            } else {
                a + h * (i + 1) as f64
            };
            panels.push(eval_panel(pa, pb, dim, &mut f)?);
        }
    }
    loop {
        let top = panels
            .iter()
            .map(|p| p.shift)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::numeric(
                "tilted measure has zero mass on the integration domain",
            ));
        }
        let mut total = vec![0.0; dim + 1];
        let mut scale = vec![0.0; dim + 1];
        let factors: Vec<f64> = panels.iter().map(|p| (p.shift - top).exp()).collect();
        for (p, &s) in panels.iter().zip(&factors) {
            for d in 0..=dim {
                total[d] += s * p.kron[d];
                scale[d] += s * p.abs[d];
            }
        }
        let floor = 1e-15 * scale[0];
        let errs: Vec<f64> = panels
            .iter()
            .zip(&factors)
            .map(|(p, &s)| {
                (0..=dim)
                    .map(|d| {
                        s * (p.kron[d] - p.gauss[d]).abs()
                            / scale[d].max(floor).max(f64::MIN_POSITIVE)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let err: f64 = errs.iter().sum();
        if err <= tol || panels.len() >= max_panels {
            let log_z = top + total[0].ln();
            let means = (1..=dim).map(|d| total[d] / total[0]).collect();
            return Ok(Tilted { log_z, means });
        }
        let cut = (tol / panels.len() as f64).max(1e-3 * errs.iter().copied().fold(0.0, f64::max));
        let mut next = Vec::with_capacity(panels.len() + 16);
        for (p, e) in panels.into_iter().zip(errs) {
            if e > cut && next.len() < max_panels {
                let m = 0.5 * (p.a + p.b);
                next.push(eval_panel(p.a, m, dim, &mut f)?);
                next.push(eval_panel(m, p.b, dim, &mut f)?);
            } else {
                next.push(p);
            }
        }
        panels = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite(40);
        let m = |p: i32| {
            r.nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(p))
                .sum::<f64>()
        };
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-11);
        assert_relative_eq!(m(8), 105.0, max_relative = 1e-11);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(12);
        let s: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(x, w)| w * x.powi(10))
            .sum();
        assert_relative_eq!(s, 2.0 / 11.0, epsilon = 1e-13);
    }

    #[test]
    fn tilted_gaussian_moments() {
        // e^{w} = N(m | 0.3, 0.04) → log Z = 0, mean 0.3, second moment 0.04 + 0.09
        let t = integrate_tilted(&[-3.0, 0.0, 3.0], 0.1, 2, 1e-12, 4096, |m, out| {
            out[0] = m;
            out[1] = m * m;
            crate::special::log_gauss(m, 0.3, 0.04)
        })
        .unwrap();
        assert!(t.log_z.abs() < 1e-12);
        assert_relative_eq!(t.means[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(t.means[1], 0.13, epsilon = 1e-12);
    }

    #[test]
    fn tilted_handles_jump_at_break_and_huge_offsets() {
        // a step function times a Gaussian, weights offset by 1e4 in log domain
        let t = integrate_tilted(&[-8.0, 0.0, 8.0], 0.5, 1, 1e-12, 4096, |m, out| {
            out[0] = if m > 0.0 { 1.0 } else { -1.0 };
            1e4 + crate::special::log_gauss(m, 0.5, 1.0)
        })
        .unwrap();
        assert_relative_eq!(t.log_z, 1e4, epsilon = 1e-9);
        let expect = 2.0 * crate::special::norm_cdf(0.5) - 1.0;
        assert_relative_eq!(t.means[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_refinement_finds_narrow_peak() {
        // initial panels are much wider than the peak
        let t = integrate_tilted(&[-5.0, 5.0], 5.0, 1, 1e-12, 4096, |m, out| {
            out[0] = m;
            crate::special::log_gauss(m, 0.7, 1e-3)
        })
        .unwrap();
        assert!(t.log_z.abs() < 1e-10, "{}", t.log_z);
        assert_relative_eq!(t.means[0], 0.7, epsilon = 1e-10);
    }
}
