//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

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
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

pub const DEFAULT_ABS_TOL: f64 = 1e-9;
pub const DEFAULT_REL_TOL: f64 = 1e-7;
const MAX_INTERVALS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_tol<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        });
    }
    if b < a {
        let r = integrate_tol(f, b, a, abs_tol, rel_tol)?;
        return Ok(QuadResult {
            value: -r.value,
            ..r
        });
    }
    let mut segments = vec![gk15(&mut f, a, b)];
    let mut evaluations = 15;
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::NonConvergence {
                what: "quadrature",
                residual: f64::INFINITY,
                target: abs_tol,
            });
        }
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target {
            return Ok(QuadResult {
                value,
                abs_error: error,
                evaluations,
            });
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::NonConvergence {
                what: "quadrature",
                residual: error,
                target,
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // interval can no longer be split in floating point
            return Err(Error::NonConvergence {
                what: "quadrature",
                residual: error,
                target,
            });
        }
        segments.push(gk15(&mut f, seg.a, mid));
        segments.push(gk15(&mut f, mid, seg.b));
        evaluations += 30;
    }
}

/// [`integrate_tol`] with the default tolerances (abs 1e-9, rel 1e-7).
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64) -> Result<QuadResult> {
    integrate_tol(f, a, b, DEFAULT_ABS_TOL, DEFAULT_REL_TOL)
}

/// Integrates over `[a, ∞)` through the substitution `x = a + u / (1 - u)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64) -> Result<QuadResult> {
    integrate(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - u;
            let v = f(a + u / w) / (w * w);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn exponential_and_reversed_bounds() {
        let r = integrate(|x| (-x).exp(), 0.0, 5.0).unwrap();
        assert!((r.value - (1.0 - (-5.0f64).exp())).abs() < 1e-12);
        let rev = integrate(|x| (-x).exp(), 5.0, 0.0).unwrap();
        assert!((rev.value + r.value).abs() < 1e-15);
    }

    #[test]
    fn peaked_integrand_needs_subdivision() {
        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((r.value - exact).abs() / exact < 1e-7);
        assert!(r.evaluations > 15);
    }

    #[test]
    fn semi_infinite_gamma_moment() {
        // ∫ x e^{-x} dx over [0, ∞) = 1
        let r = integrate_to_infinity(|x| x * (-x).exp(), 0.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_reported() {
        let err = integrate_tol(|x: f64| (1.0 / x).sin() / x, 1e-12, 1.0, 1e-14, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
