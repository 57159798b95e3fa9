//! Sampled certificates for contraction: the basic matrix inequality, the
//! LTV Riccati inequality, metric constants, and state-transition envelopes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::systems::{transition_matrix, LevySystemModel, LtvSystemModel};

pub type MetricFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type TimeMatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

pub const DEFAULT_POINTS_PER_AXIS: usize = 21;
const JACOBIAN_STEP: f64 = 1e-5;
const METRIC_STEP: f64 = 1e-4;
const SYMMETRY_TOL: f64 = 1e-10;

/// Axis-aligned box in `(t, x)` sampled on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub time: (f64, f64),
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub points_per_axis: usize,
}

impl SamplingBox {
    pub fn new(time: (f64, f64), lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if time.0 > time.1 || lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(invalid("domain", "lower corner must not exceed upper corner"));
        }
        Ok(Self {
            time,
            lower,
            upper,
            points_per_axis: DEFAULT_POINTS_PER_AXIS,
        })
    }

    /// Symmetric box `|x_i| <= radius`.
    pub fn cube(time: (f64, f64), dim: usize, radius: f64) -> Result<Self> {
        Self::new(
            time,
            DVector::from_element(dim, -radius),
            DVector::from_element(dim, radius),
        )
    }

    pub fn with_points(mut self, points_per_axis: usize) -> Self {
        self.points_per_axis = points_per_axis.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn axis(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.points_per_axis;
        if lo == hi || n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// Grid spacing per axis, time first.
    pub fn resolution(&self) -> Vec<f64> {
        let step = |lo: f64, hi: f64| {
            if self.points_per_axis > 1 {
                (hi - lo) / (self.points_per_axis - 1) as f64
            } else {
                hi - lo
            }
        };
        std::iter::once(step(self.time.0, self.time.1))
            .chain(self.lower.iter().zip(self.upper.iter()).map(|(l, u)| step(*l, *u)))
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.axis(self.time.0, self.time.1)
    }

    /// All grid points, ordered lexicographically.
    pub fn points(&self) -> Vec<(f64, DVector<f64>)> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.axis(self.lower[i], self.upper[i])).collect();
        let mut states = vec![DVector::zeros(self.dim())];
        for (i, axis) in axes.iter().enumerate() {
            let mut next = Vec::with_capacity(states.len() * axis.len());
            for st in &states {
                for &v in axis {
                    let mut x = st.clone();
                    x[i] = v;
                    next.push(x);
                }
            }
            states = next;
        }
        let mut out = Vec::new();
        for t in self.times() {
            for x in &states {
                out.push((t, x.clone()));
            }
        }
        out
    }
}

#[derive(Clone)]
pub struct ContractionCertificate {
    pub metric: MetricFn,
    pub alpha: f64,
    pub m_lower: f64,
    pub m_upper: f64,
    pub m_prime: f64,
    pub m_double_prime: f64,
    pub checked_domain: SamplingBox,
}

impl std::fmt::Debug for ContractionCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContractionCertificate")
            .field("alpha", &self.alpha)
            .field("m_lower", &self.m_lower)
            .field("m_upper", &self.m_upper)
            .field("m_prime", &self.m_prime)
            .field("m_double_prime", &self.m_double_prime)
            .field("checked_domain", &self.checked_domain)
            .finish_non_exhaustive()
    }
}

impl ContractionCertificate {
    /// Constant metric `P`; the derivative constants are zero.
    pub fn constant(p: DMatrix<f64>, alpha: f64, domain: SamplingBox) -> Result<Self> {
        check_metric(&p, domain.time.0)?;
        let eig = p.clone().symmetric_eigenvalues();
        Ok(Self {
            m_lower: eig.min(),
            m_upper: eig.max(),
            m_prime: 0.0,
            m_double_prime: 0.0,
            metric: Arc::new(move |_, _| p.clone()),
            alpha,
            checked_domain: domain,
        })
    }

    /// Metric constants estimated on `domain` with [`estimate_metric_constants`].
    pub fn from_metric(metric: MetricFn, alpha: f64, domain: SamplingBox) -> Result<Self> {
        let c = estimate_metric_constants(&metric, &domain)?;
        Ok(Self {
            metric,
            alpha,
            m_lower: c.m_lower,
            m_upper: c.m_upper,
            m_prime: c.m_prime,
            m_double_prime: c.m_double_prime,
            checked_domain: domain,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// `c·M` with all metric constants scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let metric = self.metric.clone();
        Self {
            metric: Arc::new(move |t, x| metric(t, x) * c),
            alpha: self.alpha,
            m_lower: self.m_lower * c,
            m_upper: self.m_upper * c,
            m_prime: self.m_prime * c,
            m_double_prime: self.m_double_prime * c,
            checked_domain: self.checked_domain.clone(),
        }
    }

    pub fn condition_number(&self) -> f64 {
        self.m_upper / self.m_lower
    }
}

/// How `Ṁ` enters the basic inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricDerivative {
    /// `∂_t M + Σ_i ∂_{x_i} M · f_i`
    #[default]
    Total,
    /// `∂_t M` only.
    PartialOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub check: &'static str,
    pub passed: bool,
    pub alpha: f64,
    pub tol: f64,
    /// Largest eigenvalue of the symmetrized left-hand side over all samples.
    pub worst_slack: f64,
    pub worst_time: f64,
    pub worst_state: Vec<f64>,
    pub samples: usize,
}

impl CertificationReport {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_metric(m: &DMatrix<f64>, t: f64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Structural {
            time: t,
            reason: format!("metric is {}x{}, not square", m.nrows(), m.ncols()),
        });
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::Structural {
            time: t,
            reason: format!("metric not symmetric (max asymmetry {asym:e})"),
        });
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::Structural {
            time: t,
            reason: format!("metric not positive definite (min eigenvalue {min_eig:e})"),
        });
    }
    Ok(min_eig)
}

fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Central-difference Jacobian of the drift, step `1e-5·(1 + ‖x‖)`.
pub fn drift_jacobian(model: &LevySystemModel, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let h = JACOBIAN_STEP * (1.0 + x.norm());
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (model.drift_at(t, &xp) - model.drift_at(t, &xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

fn metric_rate(
    metric: &MetricFn,
    t: f64,
    x: &DVector<f64>,
    f: &DVector<f64>,
    mode: MetricDerivative,
) -> DMatrix<f64> {
    let h = METRIC_STEP;
    let mut dm = (metric(t + h, x) - metric(t - h, x)) / (2.0 * h);
    if mode == MetricDerivative::Total {
        for i in 0..x.len() {
            if f[i] == 0.0 {
                continue;
            }
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            dm += (metric(t, &xp) - metric(t, &xm)) * (f[i] / (2.0 * h));
        }
    }
    dm
}

/// Checks `FᵀM + MF + Ṁ + 2αM ⪯ tol·I` at every sample of `samples`.
///
/// A non-symmetric or indefinite metric is a structural error rather than
/// a failed check.
pub fn check_basic_contraction(
    model: &LevySystemModel,
    cert: &ContractionCertificate,
    samples: &SamplingBox,
    tol: f64,
    mode: MetricDerivative,
) -> Result<CertificationReport> {
    if samples.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: samples.dim(),
        });
    }
    let points = samples.points();
    let slacks = points
        .par_iter()
        .map(|(t, x)| {
            let m = (cert.metric)(*t, x);
            check_metric(&m, *t)?;
            let f = model.drift_at(*t, x);
            let jac = drift_jacobian(model, *t, x);
            let dm = metric_rate(&cert.metric, *t, x, &f, mode);
            let lhs = jac.transpose() * &m + &m * &jac + dm + &m * (2.0 * cert.alpha);
            Ok(max_sym_eigenvalue(&lhs))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (worst, &worst_slack) = slacks
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("sampling box is never empty");
    Ok(CertificationReport {
        check: "basic_contraction",
        passed: worst_slack <= tol,
        alpha: cert.alpha,
        tol,
        worst_slack,
        worst_time: points[worst].0,
        worst_state: points[worst].1.iter().copied().collect(),
        samples: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiReport {
    pub check: &'static str,
    pub passed: bool,
    pub alpha: f64,
    pub tol: f64,
    pub worst_slack: f64,
    pub worst_time: f64,
    /// `min_t λ_min P(t)`
    pub alpha1: f64,
    /// `max_t λ_max P(t)`
    pub alpha2: f64,
    pub samples: usize,
}

impl RiccatiReport {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Checks `Ṗ + PA + AᵀP + 2αP ⪯ tol·I` at each time sample.
pub fn check_riccati_tv(
    model: &LtvSystemModel,
    p_matrix: &TimeMatrixFn,
    alpha: f64,
    time_samples: &[f64],
    tol: f64,
) -> Result<RiccatiReport> {
    if time_samples.is_empty() {
        return Err(invalid("time_samples", "need at least one sample"));
    }
    let rows = time_samples
        .par_iter()
        .map(|&t| {
            let p = p_matrix(t);
            if p.nrows() != model.dim {
                return Err(Error::DimensionMismatch {
                    expected: model.dim,
                    got: p.nrows(),
                });
            }
            check_metric(&p, t)?;
            let eig = p.clone().symmetric_eigenvalues();
            let dp = (p_matrix(t + METRIC_STEP) - p_matrix(t - METRIC_STEP)) / (2.0 * METRIC_STEP);
            let a = model.a_at(t);
            let lhs = dp + &p * &a + a.transpose() * &p + &p * (2.0 * alpha);
            Ok((max_sym_eigenvalue(&lhs), eig.min(), eig.max()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (worst, worst_row) = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    Ok(RiccatiReport {
        check: "riccati_tv",
        passed: worst_row.0 <= tol,
        alpha,
        tol,
        worst_slack: worst_row.0,
        worst_time: time_samples[worst],
        alpha1: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        alpha2: rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
        samples: time_samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricConstants {
    pub m_lower: f64,
    pub m_upper: f64,
    /// `sup ‖∇_x M_ij‖₂`
    pub m_prime: f64,
    /// `sup ‖∇²_x M_ij‖₂`
    pub m_double_prime: f64,
    /// Grid spacing per axis (time first).
    pub resolution: Vec<f64>,
}

/// Eigenvalue extrema and entrywise first/second `x`-derivative bounds of
/// the metric on the grid of `domain`, using central differences with step
/// `1e-4`.
pub fn estimate_metric_constants(metric: &MetricFn, domain: &SamplingBox) -> Result<MetricConstants> {
    let h = METRIC_STEP;
    let n = domain.dim();
    let rows = domain
        .points()
        .par_iter()
        .map(|(t, x)| {
            let m0 = metric(*t, x);
            check_metric(&m0, *t)?;
            let eig = m0.clone().symmetric_eigenvalues();
            let shifted = |dx: &[(usize, f64)]| {
                let mut y = x.clone();
                for &(i, d) in dx {
                    y[i] += d;
                }
                metric(*t, &y)
            };
            let dim = m0.nrows();
            // gradient[i] = ∂_{x_i} M, hessian[(i, j)] = ∂²_{x_i x_j} M
            let grads: Vec<DMatrix<f64>> = (0..n)
                .map(|i| (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h))
                .collect();
            let mut hess = vec![DMatrix::zeros(dim, dim); n * n];
            for i in 0..n {
                for j in i..n {
                    let d = if i == j {
                        (shifted(&[(i, h)]) - &m0 * 2.0 + shifted(&[(i, -h)])) / (h * h)
                    } else {
                        (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                            + shifted(&[(i, -h), (j, -h)]))
                            / (4.0 * h * h)
                    };
                    hess[i * n + j] = d.clone();
                    hess[j * n + i] = d;
                }
            }
            let mut first: f64 = 0.0;
            let mut second: f64 = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    let g = DVector::from_iterator(n, grads.iter().map(|gm| gm[(a, b)]));
                    first = first.max(g.norm());
                    let hm = DMatrix::from_fn(n, n, |i, j| hess[i * n + j][(a, b)]);
                    let spec = hm.symmetric_eigenvalues().amax();
                    second = second.max(spec);
                }
            }
            Ok((eig.min(), eig.max(), first, second))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricConstants {
        m_lower: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        m_upper: rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        m_prime: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        m_double_prime: rows.iter().map(|r| r.3).fold(0.0, f64::max),
        resolution: domain.resolution(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeStrategy {
    Given { kappa: f64, beta: f64 },
    /// Minimize `κ(β)·(1 - e^{-βH})/β`; `H` defaults to the largest sampled `t - τ`.
    Optimize { horizon: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionEnvelope {
    pub kappa: f64,
    pub beta: f64,
    pub fit_domain: Vec<(f64, f64)>,
    /// `min (κ e^{-β(t-τ)} - ‖Φ(t,τ)‖)` over the fit domain.
    pub margin: f64,
}

impl TransitionEnvelope {
    pub fn bound(&self, tau: f64, t: f64) -> f64 {
        self.kappa * (-self.beta * (t - tau)).exp()
    }
}

/// All `(τ, t)` with `τ <= t` on an `n`-point grid of `window`.
pub fn tau_t_grid(window: (f64, f64), n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    let pts: Vec<f64> = (0..n)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (n - 1) as f64)
        .collect();
    let mut out = Vec::new();
    for (i, &t) in pts.iter().enumerate() {
        for &tau in &pts[..=i] {
            out.push((tau, t));
        }
    }
    out
}

/// Spectral norm.
fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

pub fn fit_transition_envelope(
    model: &LtvSystemModel,
    tau_t_samples: &[(f64, f64)],
    strategy: &EnvelopeStrategy,
) -> Result<TransitionEnvelope> {
    if tau_t_samples.is_empty() {
        return Err(invalid("tau_t_samples", "need at least one sample"));
    }
    let norms = tau_t_samples
        .par_iter()
        .map(|&(tau, t)| Ok((t - tau, op_norm(&transition_matrix(model, tau, t, 1e-10)?))))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let margin_of = |kappa: f64, beta: f64| {
        norms
            .iter()
            .enumerate()
            .map(|(i, &(d, nm))| (i, kappa * (-beta * d).exp() - nm))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty")
    };
    let (kappa, beta) = match *strategy {
        EnvelopeStrategy::Given { kappa, beta } => {
            if !(kappa > 0.0 && beta > 0.0) {
                return Err(invalid("envelope", "kappa and beta must be positive"));
            }
            let (worst, margin) = margin_of(kappa, beta);
            // slack for the error of the numerically computed Φ
            if margin < -1e-9 * kappa {
                let (tau, t) = tau_t_samples[worst];
                return Err(Error::EnvelopeViolated {
                    tau,
                    t,
                    norm: norms[worst].1,
                    envelope: kappa * (-beta * (t - tau)).exp(),
                });
            }
            (kappa, beta)
        }
        EnvelopeStrategy::Optimize { horizon } => {
            let h = horizon.unwrap_or_else(|| norms.iter().map(|n| n.0).fold(0.0, f64::max));
            if !(h > 0.0) {
                return Err(invalid("horizon", "envelope fit needs t - τ > 0 somewhere"));
            }
            let kappa_of = |beta: f64| {
                norms
                    .iter()
                    .map(|&(d, nm)| nm * (beta * d).exp())
                    .fold(0.0, f64::max)
            };
            let objective = |log_beta: f64| {
                let beta = log_beta.exp();
                kappa_of(beta) * (-(-beta * h).exp_m1()) / beta
            };
            let (lo, hi, n) = ((1e-3f64).ln(), (1e2f64).ln(), 200);
            let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            let best = (0..n)
                .min_by(|&a, &b| objective(grid[a]).total_cmp(&objective(grid[b])))
                .expect("non-empty");
            let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
            for _ in 0..100 {
                if objective(c) < objective(d) {
                    b = d;
                } else {
                    a = c;
                }
                c = b - g * (b - a);
                d = a + g * (b - a);
            }
            let beta = (0.5 * (a + b)).exp();
            (kappa_of(beta), beta)
        }
    };
    Ok(TransitionEnvelope {
        kappa,
        beta,
        fit_domain: tau_t_samples.to_vec(),
        margin: margin_of(kappa, beta).1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: DMatrix<f64>) -> LevySystemModel {
        let n = a.nrows();
        LevySystemModel::new("linear", n, Arc::new(move |_, x| &a * x), 1.0).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn scalar_boundary() {
        let m = linear(diag(&[-2.0]));
        let domain = SamplingBox::cube((0.0, 1.0), 1, 3.0).unwrap().with_points(7);
        let cert = ContractionCertificate::constant(diag(&[1.0]), 2.0, domain.clone()).unwrap();
        let r = check_basic_contraction(&m, &cert, &domain, 1e-6, MetricDerivative::Total).unwrap();
        assert!(r.passed);
        assert!(r.worst_slack.abs() < 1e-6);
        let r = check_basic_contraction(&m, &cert.with_alpha(2.1), &domain, 1e-6, MetricDerivative::Total).unwrap();
        assert!(!r.passed);
        assert!((r.worst_slack - 0.2).abs() < 1e-6);
    }

    #[test]
    fn diagonal_2d_fails_along_slow_direction() {
        let m = linear(diag(&[-1.0, -2.0]));
        let domain = SamplingBox::cube((0.0, 1.0), 2, 1.0).unwrap().with_points(5);
        let cert = ContractionCertificate::constant(DMatrix::identity(2, 2), 1.0, domain.clone()).unwrap();
        assert!(check_basic_contraction(&m, &cert, &domain, 1e-6, MetricDerivative::Total).unwrap().passed);
        let r = check_basic_contraction(&m, &cert.with_alpha(1.5), &domain, 1e-6, MetricDerivative::Total).unwrap();
        assert!(!r.passed);
        assert!((r.worst_slack - 1.0).abs() < 1e-6);
    }

    #[test]
    fn indefinite_metric_is_structural() {
        let m = linear(diag(&[-1.0]));
        let domain = SamplingBox::cube((0.0, 1.0), 1, 1.0).unwrap().with_points(3);
        let cert = ContractionCertificate {
            metric: Arc::new(|_, _| diag(&[-1.0])),
            alpha: 1.0,
            m_lower: 1.0,
            m_upper: 1.0,
            m_prime: 0.0,
            m_double_prime: 0.0,
            checked_domain: domain.clone(),
        };
        assert!(matches!(
            check_basic_contraction(&m, &cert, &domain, 0.0, MetricDerivative::Total),
            Err(Error::Structural { .. })
        ));
    }

    #[test]
    fn riccati_examples() {
        let a = LtvSystemModel::constant("a", diag(&[-0.7, -0.7]), 1.0).unwrap();
        let identity: TimeMatrixFn = Arc::new(|_| DMatrix::identity(2, 2));
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let r = check_riccati_tv(&a, &identity, 0.7, &times, 1e-9).unwrap();
        assert!(r.passed);
        assert_eq!((r.alpha1, r.alpha2), (1.0, 1.0));

        let tv = LtvSystemModel::new(
            "tv",
            2,
            Arc::new(|t: f64| diag(&[-1.0 - 0.5 * t.sin(), -2.0])),
            1.0,
        )
        .unwrap();
        assert!(check_riccati_tv(&tv, &identity, 0.5, &times, 1e-9).unwrap().passed);

        let p: TimeMatrixFn = Arc::new(|t: f64| diag(&[1.0, 2.0 + t.sin()]));
        let dense: Vec<f64> = (0..=4000).map(|i| i as f64 * std::f64::consts::TAU / 4000.0).collect();
        let r = check_riccati_tv(&tv, &p, 0.1, &dense, 1e-9).unwrap();
        assert!((r.alpha1 - 1.0).abs() < 1e-12);
        assert!((r.alpha2 - 3.0).abs() < 1e-6);
    }

    #[test]
    fn metric_constant_oracles() {
        let domain = SamplingBox::cube((0.0, 1.0), 2, 1.0).unwrap();
        let identity: MetricFn = Arc::new(|_, _| DMatrix::identity(2, 2));
        let c = estimate_metric_constants(&identity, &domain).unwrap();
        assert_eq!((c.m_lower, c.m_upper, c.m_prime, c.m_double_prime), (1.0, 1.0, 0.0, 0.0));

        let quad: MetricFn = Arc::new(|_, x| diag(&[1.0 + x[0] * x[0], 1.0]));
        let c = estimate_metric_constants(&quad, &domain).unwrap();
        assert!((c.m_lower - 1.0).abs() < 1e-12);
        assert!((c.m_upper - 2.0).abs() < 1e-12);
        assert!((c.m_prime - 2.0).abs() < 1e-6);
        assert!((c.m_double_prime - 2.0).abs() < 1e-4);

        let tv: MetricFn = Arc::new(|t, _| diag(&[1.0, 2.0 + t.sin()]));
        let c = estimate_metric_constants(&tv, &domain).unwrap();
        assert_eq!((c.m_prime, c.m_double_prime), (0.0, 0.0));
    }

    #[test]
    fn envelope_given_and_optimized() {
        let samples = tau_t_grid((0.0, 2.0), 21);
        let d = LtvSystemModel::constant("d", diag(&[-1.0, -2.0]), 1.0).unwrap();
        let env = fit_transition_envelope(&d, &samples, &EnvelopeStrategy::Given { kappa: 1.0, beta: 1.0 }).unwrap();
        assert!(env.margin.abs() < 1e-12);
        assert!(fit_transition_envelope(&d, &samples, &EnvelopeStrategy::Given { kappa: 1.0, beta: 1.2 }).is_err());

        let iso = LtvSystemModel::constant("iso", diag(&[-2.0, -2.0]), 1.0).unwrap();
        let env = fit_transition_envelope(&iso, &samples, &EnvelopeStrategy::Optimize { horizon: None }).unwrap();
        assert!((env.beta - 2.0).abs() < 1e-3, "beta = {}", env.beta);
        assert!((env.kappa - 1.0).abs() < 1e-2);

        let jordan = LtvSystemModel::constant("j", DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]), 1.0).unwrap();
        let env = fit_transition_envelope(&jordan, &samples, &EnvelopeStrategy::Optimize { horizon: None }).unwrap();
        assert!(env.kappa > 1.0);
        assert!(env.margin >= -1e-12);
    }
}
