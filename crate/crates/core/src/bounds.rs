//! Mean-squared incremental bounds for white, shot, Lévy and LTV shot noise,
//! the jump-interaction term ψ_k, and Poisson weights.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::contraction::{ContractionCertificate, RiccatiReport, TransitionEnvelope};
use crate::error::{invalid, Error, Result};
use crate::noise::{Channel, RandomStream};
use crate::provenance::Provenance;
use crate::quad::{integrate, integrate_to_infinity};
use crate::systems::ModelKind;

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `P(N(t) - N(s) = k) = e^{-λΔ}(λΔ)^k / k!`, evaluated in log space.
pub fn poisson_prob(lambda: f64, s: f64, t: f64, k: usize) -> f64 {
    let mean = lambda * (t - s).max(0.0);
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-mean + k as f64 * mean.ln() - ln_factorial(k)).exp()
}

/// Count `K = ⌈λΔ + 10√(λΔ) + 10⌉` beyond which the Poisson tail is below 1e-10.
pub fn poisson_truncation(lambda: f64, s: f64, t: f64) -> usize {
    let mean = lambda * (t - s).max(0.0);
    (mean + 10.0 * mean.sqrt() + 10.0).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    White,
    Shot,
    Levy,
    ShotLtv,
}

impl BoundKind {
    pub fn matches(self, model: ModelKind) -> bool {
        matches!(
            (self, model),
            (BoundKind::White, ModelKind::White)
                | (BoundKind::Shot, ModelKind::Shot)
                | (BoundKind::ShotLtv, ModelKind::Shot)
                | (BoundKind::Levy, ModelKind::Levy)
        )
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::White => "white",
            BoundKind::Shot => "shot",
            BoundKind::Levy => "levy",
            BoundKind::ShotLtv => "shot_ltv",
        })
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type KappaFn = Arc<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HProvenance {
    UserSupplied,
    PsiKLtv,
}

/// The jump-increment bound `h(t)` of the shot and Lévy bounds.
#[derive(Clone)]
pub struct HFunction {
    pub h: ScalarFn,
    pub dh: Option<ScalarFn>,
    pub provenance: HProvenance,
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFunction")
            .field("analytic_derivative", &self.dh.is_some())
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl HFunction {
    pub fn new(h: ScalarFn) -> Self {
        Self {
            h,
            dh: None,
            provenance: HProvenance::UserSupplied,
        }
    }

    pub fn with_derivative(h: ScalarFn, dh: ScalarFn) -> Self {
        Self {
            h,
            dh: Some(dh),
            provenance: HProvenance::UserSupplied,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_derivative(Arc::new(move |_| c), Arc::new(|_| 0.0))
    }

    /// `c0 + slope·(t - t0)`
    pub fn affine(c0: f64, slope: f64, t0: f64) -> Self {
        Self::with_derivative(Arc::new(move |t| c0 + slope * (t - t0)), Arc::new(move |_| slope))
    }

    /// `h(τ) = ψ_k(s, τ)` with `s` the start of `spec.window`.
    pub fn from_psi(spec: PsiSpec, strategy: PsiStrategy) -> Self {
        let s = spec.window.0;
        let (hs, ds) = (spec.clone(), spec);
        let (hst, dst) = (strategy.clone(), strategy);
        Self {
            h: Arc::new(move |tau| {
                psi_k(&hs.with_window((s, tau.max(s))), &hst).map_or(f64::NAN, |v| v.value)
            }),
            dh: Some(Arc::new(move |tau| psi_k_derivative(&ds, &dst, tau).unwrap_or(f64::NAN))),
            provenance: HProvenance::PsiKLtv,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.h)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match &self.dh {
            Some(dh) => dh(t),
            None => {
                let step = 1e-6 * (1.0 + t.abs());
                ((self.h)(t + step) - (self.h)(t - step)) / (2.0 * step)
            }
        }
    }

    /// `h >= 0` and finite on a 65-point grid of `[s, t]`.
    pub fn validate(&self, s: f64, t: f64) -> Result<()> {
        for i in 0..=64 {
            let tau = s + (t - s) * i as f64 / 64.0;
            let v = self.value(tau);
            if !v.is_finite() || v < 0.0 {
                return Err(invalid("h", format!("h({tau}) = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// One evaluated bound.
#[derive(Clone)]
pub struct BoundParams {
    pub kind: BoundKind,
    pub beta: f64,
    pub k: usize,
    /// `m̲` (or `α₁` for the LTV bound).
    pub m_lower: f64,
    pub kappa_fn: KappaFn,
    pub window: (f64, f64),
    pub strategy: String,
    pub std_err: f64,
    pub warnings: Vec<String>,
}

impl fmt::Debug for BoundParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundParams")
            .field("kind", &self.kind)
            .field("beta", &self.beta)
            .field("k", &self.k)
            .field("m_lower", &self.m_lower)
            .field("window", &self.window)
            .field("strategy", &self.strategy)
            .field("warnings", &self.warnings)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub kind: BoundKind,
    pub k: usize,
    pub s: f64,
    pub t: f64,
    pub beta: f64,
    pub kappa: f64,
    pub rhs_total: f64,
    pub strategy: String,
    pub std_err: f64,
}

impl BoundParams {
    pub fn kappa(&self, s: f64, t: f64) -> Result<f64> {
        let v = (self.kappa_fn)(s, t)?;
        if !v.is_finite() {
            return Err(invalid("kappa", format!("non-finite value at (s, t) = ({s}, {t})")));
        }
        Ok(v)
    }

    /// Right-hand side given `e0_sq = E‖y(s) - x(s)‖²`.
    pub fn rhs(&self, e0_sq: f64, s: f64, t: f64) -> Result<f64> {
        let decay = e0_sq / self.m_lower * (-self.beta * (t - s)).exp();
        let kappa = self.kappa(s, t)?;
        let ball = match self.kind {
            BoundKind::White => kappa / (self.m_lower * self.beta),
            _ => kappa / self.m_lower,
        };
        Ok(decay + ball)
    }

    pub fn row(&self, e0_sq: f64, s: f64, t: f64) -> Result<BoundRow> {
        Ok(BoundRow {
            kind: self.kind,
            k: self.k,
            s,
            t,
            beta: self.beta,
            kappa: self.kappa(s, t)?,
            rhs_total: self.rhs(e0_sq, s, t)?,
            strategy: self.strategy.clone(),
            std_err: self.std_err,
        })
    }
}

fn check_window(s: f64, t: f64) -> Result<()> {
    if !(s.is_finite() && t.is_finite() && s <= t) {
        return Err(Error::InvalidWindow { start: s, end: t });
    }
    Ok(())
}

/// `β_w = 2α - (γ²/m̲)(m' + m''/2)`.
pub fn white_rate(cert: &ContractionCertificate, gamma: f64) -> Result<f64> {
    let penalty = gamma * gamma / cert.m_lower * (cert.m_prime + 0.5 * cert.m_double_prime);
    let beta = 2.0 * cert.alpha - penalty;
    if !(beta > 0.0) {
        return Err(Error::NoiseDominates {
            beta_w: beta,
            two_alpha: 2.0 * cert.alpha,
            penalty,
        });
    }
    Ok(beta)
}

/// `γ²(m' + m̄)(1 - e^{-βΔ})` at an arbitrary rate.
pub fn kappa_white_at_rate(gamma: f64, m_prime: f64, m_upper: f64, beta: f64, s: f64, t: f64) -> f64 {
    gamma * gamma * (m_prime + m_upper) * -(-beta * (t - s)).exp_m1()
}

/// `k∫_s^t h'(τ)e^{-β(t-τ)}dτ + k·h(s)e^{-β(t-s)}` at an arbitrary rate.
pub fn kappa_shot_at_rate(h: &HFunction, k: usize, beta: f64, s: f64, t: f64) -> Result<f64> {
    check_window(s, t)?;
    if k == 0 {
        return Ok(0.0);
    }
    let integral = integrate(|tau| h.derivative(tau) * (-beta * (t - tau)).exp(), s, t)?.value;
    let hs = h.value(s);
    if !hs.is_finite() {
        return Err(invalid("h", format!("h({s}) is not finite")));
    }
    Ok(k as f64 * (integral + hs * (-beta * (t - s)).exp()))
}

pub fn white_bound(cert: &ContractionCertificate, gamma: f64, s: f64, t: f64) -> Result<BoundParams> {
    check_window(s, t)?;
    let beta = white_rate(cert, gamma)?;
    let (mp, mu) = (cert.m_prime, cert.m_upper);
    Ok(BoundParams {
        kind: BoundKind::White,
        beta,
        k: 0,
        m_lower: cert.m_lower,
        kappa_fn: Arc::new(move |s, t| Ok(kappa_white_at_rate(gamma, mp, mu, beta, s, t))),
        window: (s, t),
        strategy: "closed_form".into(),
        std_err: 0.0,
        warnings: Vec::new(),
    })
}

fn h_strategy_label(h: &HFunction) -> String {
    match h.provenance {
        HProvenance::UserSupplied => "user_h".into(),
        HProvenance::PsiKLtv => "psi_k".into(),
    }
}

pub fn shot_bound(cert: &ContractionCertificate, h: &HFunction, k: usize, s: f64, t: f64) -> Result<BoundParams> {
    check_window(s, t)?;
    if !(cert.alpha > 0.0) {
        return Err(invalid("alpha", "contraction rate must be positive"));
    }
    h.validate(s, t)?;
    let beta = 2.0 * cert.alpha;
    let hc = h.clone();
    Ok(BoundParams {
        kind: BoundKind::Shot,
        beta,
        k,
        m_lower: cert.m_lower,
        kappa_fn: Arc::new(move |s, t| kappa_shot_at_rate(&hc, k, beta, s, t)),
        window: (s, t),
        strategy: h_strategy_label(h),
        std_err: 0.0,
        warnings: Vec::new(),
    })
}

pub fn levy_bound(
    cert: &ContractionCertificate,
    h: &HFunction,
    gamma: f64,
    k: usize,
    s: f64,
    t: f64,
) -> Result<BoundParams> {
    check_window(s, t)?;
    h.validate(s, t)?;
    let beta = white_rate(cert, gamma)?;
    let (mp, mu) = (cert.m_prime, cert.m_upper);
    let hc = h.clone();
    Ok(BoundParams {
        kind: BoundKind::Levy,
        beta,
        k,
        m_lower: cert.m_lower,
        kappa_fn: Arc::new(move |s, t| {
            Ok(kappa_shot_at_rate(&hc, k, beta, s, t)? + kappa_white_at_rate(gamma, mp, mu, beta, s, t) / beta)
        }),
        window: (s, t),
        strategy: h_strategy_label(h),
        std_err: 0.0,
        warnings: Vec::new(),
    })
}

/// Law of the arrival times inside the ψ_k expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeLaw {
    /// `T_i - s ~ Gamma(i, λ)`.
    #[default]
    GammaUnconditional,
    /// Arrival times are the order statistics of `k` uniforms on the window.
    UniformOrderStatistics,
}

impl fmt::Display for TimeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeLaw::GammaUnconditional => "gamma",
            TimeLaw::UniformOrderStatistics => "uniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiSpec {
    pub alpha2: f64,
    pub eta: f64,
    /// Envelope constant `κ` of `‖Φ(t,τ)‖ <= κe^{-β(t-τ)}`.
    pub kappa: f64,
    /// Envelope rate `β`.
    pub beta: f64,
    pub lambda: f64,
    /// `E_k‖y(s) - x(s)‖` (first moment).
    pub d0: f64,
    pub k: usize,
    pub window: (f64, f64),
    pub time_law: TimeLaw,
}

impl PsiSpec {
    pub fn validate(&self) -> Result<()> {
        check_window(self.window.0, self.window.1)?;
        for (name, v) in [
            ("alpha2", self.alpha2),
            ("eta", self.eta),
            ("kappa", self.kappa),
            ("d0", self.d0),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("must be positive, got {}", self.beta)));
        }
        if self.time_law == TimeLaw::GammaUnconditional && !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn with_window(&self, window: (f64, f64)) -> Self {
        Self { window, ..self.clone() }
    }

    /// `2α₂ηκd₀`
    fn c1(&self) -> f64 {
        2.0 * self.alpha2 * self.eta * self.kappa * self.d0
    }

    /// `2α₂κη²`
    fn c2(&self) -> f64 {
        2.0 * self.alpha2 * self.kappa * self.eta * self.eta
    }

    fn x(&self) -> f64 {
        self.beta * (self.window.1 - self.window.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiStrategy {
    Quadrature,
    MonteCarlo { n: usize, stream: RandomStream },
    LooseFirstTerm,
    LooseMaxNng,
    LooseSumExp,
}

impl PsiStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            PsiStrategy::Quadrature => "quadrature",
            PsiStrategy::MonteCarlo { .. } => "mc",
            PsiStrategy::LooseFirstTerm => "loose_first_term",
            PsiStrategy::LooseMaxNng => "loose_max_nng",
            PsiStrategy::LooseSumExp => "loose_sum_exp",
        }
    }

    pub fn is_upper_bound(&self) -> bool {
        matches!(
            self,
            PsiStrategy::LooseFirstTerm | PsiStrategy::LooseMaxNng | PsiStrategy::LooseSumExp
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    /// Monte Carlo standard error; zero for deterministic strategies.
    pub std_err: f64,
    /// Set for the loose strategies: the value bounds ψ_k from above.
    pub upper_bound: bool,
    pub strategy: &'static str,
}

/// `E[e^{-βG}]` for `G ~ Gamma(r, λ)`, by quadrature against the density.
fn gamma_laplace(r: usize, lambda: f64, beta: f64) -> Result<f64> {
    let ln_norm = r as f64 * lambda.ln() - ln_factorial(r - 1);
    let rf = (r - 1) as f64;
    Ok(integrate_to_infinity(
        |x| {
            if x == 0.0 {
                return if r == 1 { lambda } else { 0.0 };
            }
            (ln_norm + rf * x.ln() - (lambda + beta) * x).exp()
        },
        0.0,
    )?
    .value)
}

/// `E[e^{-xB}]` for `B ~ Beta(r, k - r + 1)`, by quadrature against the density.
fn beta_laplace(r: usize, k: usize, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(1.0);
    }
    let ln_norm = ln_factorial(k) - ln_factorial(r - 1) - ln_factorial(k - r);
    let norm = ln_norm.exp();
    let (a, b) = ((r - 1) as i32, (k - r) as i32);
    Ok(integrate(|u| norm * u.powi(a) * (1.0 - u).powi(b) * (-x * u).exp(), 0.0, 1.0)?.value)
}

/// `L(r) = E[e^{-β(T_{j+r} - T_j)}]` for `r = 1..k` under `spec.time_law`
/// (with `T_0 = s`); spacings of order statistics and Gamma increments both
/// depend only on the gap `r`.
fn gap_laplace(spec: &PsiSpec) -> Result<Vec<f64>> {
    (1..=spec.k)
        .map(|r| match spec.time_law {
            TimeLaw::GammaUnconditional => gamma_laplace(r, spec.lambda, spec.beta),
            TimeLaw::UniformOrderStatistics => beta_laplace(r, spec.k, spec.x()),
        })
        .collect()
}

fn first_term_exact(spec: &PsiSpec, l: &[f64]) -> f64 {
    spec.c1() * l.iter().sum::<f64>()
}

/// `c2 Σ_i Σ_{j<i} L(i - j) = c2 Σ_{r=1}^{k-1} (k - r) L(r)`
fn second_term_exact(spec: &PsiSpec, l: &[f64]) -> f64 {
    let k = spec.k;
    spec.c2() * (1..k).map(|r| (k - r) as f64 * l[r - 1]).sum::<f64>()
}

/// Closed form of ψ_k for both time laws.
pub fn psi_k_closed_form(spec: &PsiSpec) -> Result<f64> {
    spec.validate()?;
    let k = spec.k as f64;
    if spec.k == 0 {
        return Ok(0.0);
    }
    match spec.time_law {
        TimeLaw::GammaUnconditional => {
            let rho = spec.lambda / (spec.lambda + spec.beta);
            let first: f64 = (1..=spec.k).map(|i| rho.powi(i as i32)).sum();
            let second: f64 = (1..spec.k).map(|r| (spec.k - r) as f64 * rho.powi(r as i32)).sum();
            Ok(spec.c1() * first + spec.c2() * second)
        }
        TimeLaw::UniformOrderStatistics => {
            let x = spec.x();
            if x == 0.0 {
                return Ok(spec.c1() * k + spec.c2() * k * (k - 1.0) / 2.0);
            }
            let first = k * -(-x).exp_m1() / x;
            let second = k * (k - 1.0) * (x + (-x).exp_m1()) / (x * x);
            Ok(spec.c1() * first + spec.c2() * second)
        }
    }
}

fn psi_monte_carlo(spec: &PsiSpec, n: usize, stream: RandomStream) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(invalid("n", "Monte Carlo needs at least two samples"));
    }
    let mut rng = stream.channel(Channel::Auxiliary);
    let (c1, c2, beta, k) = (spec.c1(), spec.c2(), spec.beta, spec.k);
    let span = spec.window.1 - spec.window.0;
    let exp = match spec.time_law {
        TimeLaw::GammaUnconditional => Some(Exp::new(spec.lambda).map_err(|e| invalid("lambda", e.to_string()))?),
        TimeLaw::UniformOrderStatistics => None,
    };
    let mut offsets = vec![0.0; k];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        match &exp {
            Some(e) => {
                let mut acc = 0.0;
                for o in offsets.iter_mut() {
                    acc += e.sample(&mut rng);
                    *o = acc;
                }
            }
            None => {
                for o in offsets.iter_mut() {
                    *o = rng.random::<f64>();
                }
                offsets.sort_by(f64::total_cmp);
                for o in offsets.iter_mut() {
                    *o *= span;
                }
            }
        }
        let mut v = 0.0;
        for i in 0..k {
            v += c1 * (-beta * offsets[i]).exp();
            for j in 0..i {
                v += c2 * (-beta * (offsets[i] - offsets[j])).exp();
            }
        }
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, (var / nf).sqrt()))
}

/// ψ_k(s,t) under `spec.time_law` with the requested strategy.
///
/// The loose strategies replace `Σ_i e^{-β(T_i-s)}` by `k·q` with
/// `q = E[e^{-β(T_1-s)}]`, and the pair sum by either its exact value, by
/// `k(k-1)/2·q`, or by the geometric series `Σ_{r<i} q^r <= min(i-1, q/(1-q))`.
pub fn psi_k(spec: &PsiSpec, strategy: &PsiStrategy) -> Result<PsiValue> {
    spec.validate()?;
    let done = |value: f64, std_err: f64| PsiValue {
        value,
        std_err,
        upper_bound: strategy.is_upper_bound(),
        strategy: strategy.label(),
    };
    if spec.k == 0 {
        return Ok(done(0.0, 0.0));
    }
    let k = spec.k as f64;
    match strategy {
        PsiStrategy::MonteCarlo { n, stream } => {
            let (mean, se) = psi_monte_carlo(spec, *n, *stream)?;
            return Ok(done(mean, se));
        }
        PsiStrategy::Quadrature => {
            let l = gap_laplace(spec)?;
            return Ok(done(first_term_exact(spec, &l) + second_term_exact(spec, &l), 0.0));
        }
        _ => {}
    }
    let q = match spec.time_law {
        TimeLaw::GammaUnconditional => gamma_laplace(1, spec.lambda, spec.beta)?,
        TimeLaw::UniformOrderStatistics => beta_laplace(1, spec.k, spec.x())?,
    };
    let first = spec.c1() * k * q;
    let second = match strategy {
        PsiStrategy::LooseFirstTerm => second_term_exact(spec, &gap_laplace(spec)?),
        PsiStrategy::LooseMaxNng => spec.c2() * k * (k - 1.0) / 2.0 * q,
        PsiStrategy::LooseSumExp => {
            let geometric = if q < 1.0 { q / (1.0 - q) } else { f64::INFINITY };
            spec.c2() * (2..=spec.k).map(|i| ((i - 1) as f64).min(geometric)).sum::<f64>()
        }
        _ => unreachable!(),
    };
    Ok(done(first + second, 0.0))
}

/// `dψ_k(s,τ)/dτ` with `s = spec.window.0`.
///
/// Under the Gamma law ψ_k does not depend on `τ`, so the derivative is zero.
/// Otherwise a central difference with step `1e-3·(t - s)` is used (one-sided
/// next to `s`); Monte Carlo strategies reuse their stream on both sides.
pub fn psi_k_derivative(spec: &PsiSpec, strategy: &PsiStrategy, tau: f64) -> Result<f64> {
    spec.validate()?;
    let s = spec.window.0;
    if spec.k == 0 || spec.time_law == TimeLaw::GammaUnconditional {
        return Ok(0.0);
    }
    let span = spec.window.1 - s;
    let h = 1e-3 * if span > 0.0 { span } else { 1.0 };
    let at = |tau: f64| psi_k(&spec.with_window((s, tau)), strategy).map(|v| v.value);
    if tau - h < s {
        Ok((at(tau + h)? - at(tau.max(s))?) / (tau + h - tau.max(s)))
    } else {
        Ok((at(tau + h)? - at(tau - h)?) / (2.0 * h))
    }
}

/// Contraction data of an LTV system under `P(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiConstants {
    pub alpha: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl From<&RiccatiReport> for RiccatiConstants {
    fn from(r: &RiccatiReport) -> Self {
        Self {
            alpha: r.alpha,
            alpha1: r.alpha1,
            alpha2: r.alpha2,
        }
    }
}

/// LTV shot bound: `β_s = 2α`,
/// `κ_s = ∫_s^t dψ_k(s,τ)/dτ e^{-β_s(t-τ)}dτ + kα₂η²e^{-β_s(t-s)}`, with `α₁`
/// in place of `m̲`.
///
/// `spec` supplies `λ`, `d₀`, `k` and the time law; `α₂`, `η` and the
/// envelope `(κ, β)` are taken from the other arguments.
pub fn shot_ltv_bound(
    riccati: RiccatiConstants,
    envelope: &TransitionEnvelope,
    spec: &PsiSpec,
    strategy: &PsiStrategy,
    eta: f64,
    s: f64,
    t: f64,
) -> Result<BoundParams> {
    check_window(s, t)?;
    if !(riccati.alpha > 0.0 && riccati.alpha1 > 0.0) {
        return Err(invalid("riccati", "alpha and alpha1 must be positive"));
    }
    let spec = PsiSpec {
        alpha2: riccati.alpha2,
        eta,
        kappa: envelope.kappa,
        beta: envelope.beta,
        window: (s, t),
        ..spec.clone()
    };
    spec.validate()?;
    let beta_s = 2.0 * riccati.alpha;
    let k = spec.k;
    let at_t = psi_k(&spec, strategy)?;

    let mut warnings = Vec::new();
    if k > 0 && spec.time_law == TimeLaw::UniformOrderStatistics && t > s {
        let floor = 1e-9 + 3.0 * at_t.std_err / (1e-3 * (t - s));
        for i in 1..=8 {
            let tau = s + (t - s) * i as f64 / 8.0;
            let d = psi_k_derivative(&spec, strategy, tau)?;
            if d < -floor {
                warnings.push(format!("dpsi_k/dtau = {d:.6e} < 0 at tau = {tau}"));
                break;
            }
        }
    }

    let strat = strategy.clone();
    let (alpha2, base) = (riccati.alpha2, spec.clone());
    let kappa_fn: KappaFn = Arc::new(move |s, t| {
        check_window(s, t)?;
        let tail = k as f64 * alpha2 * eta * eta * (-beta_s * (t - s)).exp();
        if k == 0 || base.time_law == TimeLaw::GammaUnconditional || t == s {
            return Ok(tail);
        }
        let sp = base.with_window((s, t));
        let mut failure = None;
        let integral = integrate(
            |tau| match psi_k_derivative(&sp, &strat, tau) {
                Ok(d) => d * (-beta_s * (t - tau)).exp(),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            s,
            t,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(integral.value + tail)
    });
    Ok(BoundParams {
        kind: BoundKind::ShotLtv,
        beta: beta_s,
        k,
        m_lower: riccati.alpha1,
        kappa_fn,
        window: (s, t),
        strategy: format!("{}:{}", strategy.label(), spec.time_law),
        std_err: at_t.std_err,
        warnings,
    })
}

/// `∫_0^t θ'(s)e^{-μ(t-s)}ds + ζe^{-μt} + y0·e^{-μt}`.
pub fn comparison_rhs(y0: f64, zeta: f64, mu: f64, theta: &HFunction, t: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(invalid("mu", "must be positive"));
    }
    check_window(0.0, t)?;
    let integral = integrate(|s| theta.derivative(s) * (-mu * (t - s)).exp(), 0.0, t)?.value;
    Ok(integral + (zeta + y0) * (-mu * t).exp())
}

/// `kind,k,s,t,beta,kappa,rhs_total,strategy,std_err,experiment,seed,version`
pub fn write_bounds_csv<W: Write>(mut out: W, rows: &[BoundRow], provenance: &Provenance) -> io::Result<()> {
    let mut header = vec!["kind", "k", "s", "t", "beta", "kappa", "rhs_total", "strategy", "std_err"];
    header.extend(Provenance::columns());
    writeln!(out, "{}", header.join(","))?;
    let prov = provenance.values().join(",");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.kind, r.k, r.s, r.t, r.beta, r.kappa, r.rhs_total, r.strategy, r.std_err, prov
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::contraction::SamplingBox;

    fn cert(alpha: f64, m: (f64, f64, f64, f64)) -> ContractionCertificate {
        let mut c = ContractionCertificate::constant(
            DMatrix::identity(1, 1),
            alpha,
            SamplingBox::cube((0.0, 1.0), 1, 1.0).unwrap(),
        )
        .unwrap();
        (c.m_lower, c.m_upper, c.m_prime, c.m_double_prime) = m;
        c
    }

    fn unit_psi(k: usize, law: TimeLaw) -> PsiSpec {
        PsiSpec {
            alpha2: 1.0,
            eta: 1.0,
            kappa: 1.0,
            beta: 1.0,
            lambda: 1.0,
            d0: 1.0,
            k,
            window: (0.0, 1.0),
            time_law: law,
        }
    }

    #[test]
    fn poisson_examples() {
        assert!((poisson_prob(1.0, 0.0, 1.0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_prob(1.0, 2.0, 2.0, 0), 1.0);
        assert_eq!(poisson_prob(1.0, 2.0, 2.0, 3), 0.0);
        assert!((poisson_prob(2.0, 0.0, 0.5, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(poisson_prob(1.0, 0.0, 1000.0, 1000).is_finite());
    }

    #[test]
    fn poisson_sum_within_truncation() {
        for &(lambda, span) in &[(0.1, 1.0), (1.0, 1.0), (3.0, 7.0), (50.0, 4.0)] {
            let kmax = poisson_truncation(lambda, 0.0, span);
            let total: f64 = (0..=kmax).map(|k| poisson_prob(lambda, 0.0, span, k)).sum();
            assert!((total - 1.0).abs() < 1e-10, "lambda {lambda}: {total}");
        }
    }

    #[test]
    fn white_examples() {
        let b = white_bound(&cert(1.0, (1.0, 1.0, 1.0, 2.0)), 0.5, 0.0, 1.0).unwrap();
        assert!((b.beta - 1.5).abs() < 1e-15);
        let ou = white_bound(&cert(1.0, (1.0, 1.0, 0.0, 0.0)), 1.0, 0.0, 50.0).unwrap();
        assert!((ou.rhs(0.0, 0.0, 50.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            white_bound(&cert(0.1, (1.0, 1.0, 1.0, 2.0)), 1.0, 0.0, 1.0),
            Err(Error::NoiseDominates { .. })
        ));
    }

    #[test]
    fn shot_examples() {
        let c = cert(0.5, (1.0, 1.0, 0.0, 0.0));
        let b = shot_bound(&c, &HFunction::constant(2.0), 0, 0.0, 1.0).unwrap();
        assert_eq!(b.kappa(0.0, 1.0).unwrap(), 0.0);
        let b = shot_bound(&c, &HFunction::constant(2.0), 3, 0.0, 1.0).unwrap();
        assert!((b.kappa(0.0, 1.0).unwrap() - 6.0 * (-1.0f64).exp()).abs() < 1e-12);
        let lin = HFunction::new(Arc::new(|t| 0.7 * t));
        let b = shot_bound(&c, &lin, 2, 0.0, 2.0).unwrap();
        let exact = 2.0 * 0.7 * (1.0 - (-2.0f64).exp());
        assert!((b.kappa(0.0, 2.0).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn levy_reductions() {
        let c = cert(1.0, (1.0, 1.0, 0.0, 0.0));
        let h = HFunction::affine(0.0, 0.1, 0.0);
        let l0 = levy_bound(&c, &h, 0.5, 0, 0.0, 1.0).unwrap();
        let w = white_bound(&c, 0.5, 0.0, 1.0).unwrap();
        assert_eq!(l0.beta, w.beta);
        assert_eq!(l0.kappa(0.0, 1.0).unwrap(), w.kappa(0.0, 1.0).unwrap() / w.beta);
        let l = levy_bound(&c, &h, 0.0, 2, 0.0, 1.0).unwrap();
        let s = shot_bound(&c, &h, 2, 0.0, 1.0).unwrap();
        assert_eq!(l.beta, 2.0);
        assert!((l.kappa(0.0, 1.0).unwrap() - s.kappa(0.0, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn psi_unit_examples() {
        let g = psi_k(&unit_psi(1, TimeLaw::GammaUnconditional), &PsiStrategy::Quadrature).unwrap();
        assert!((g.value - 1.0).abs() < 1e-6);
        let u = psi_k(&unit_psi(1, TimeLaw::UniformOrderStatistics), &PsiStrategy::Quadrature).unwrap();
        assert!((u.value - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-6);
        for law in [TimeLaw::GammaUnconditional, TimeLaw::UniformOrderStatistics] {
            for strat in [
                PsiStrategy::Quadrature,
                PsiStrategy::LooseFirstTerm,
                PsiStrategy::LooseMaxNng,
                PsiStrategy::LooseSumExp,
                PsiStrategy::MonteCarlo {
                    n: 1000,
                    stream: RandomStream::new(0, 0),
                },
            ] {
                assert_eq!(psi_k(&unit_psi(0, law), &strat).unwrap().value, 0.0);
            }
        }
    }

    #[test]
    fn psi_quadrature_matches_closed_form() {
        for law in [TimeLaw::GammaUnconditional, TimeLaw::UniformOrderStatistics] {
            for k in 1..=6 {
                let mut spec = unit_psi(k, law);
                spec.beta = 1.7;
                spec.lambda = 0.6;
                spec.window = (0.5, 2.5);
                let q = psi_k(&spec, &PsiStrategy::Quadrature).unwrap().value;
                let c = psi_k_closed_form(&spec).unwrap();
                assert!((q - c).abs() < 1e-7 * (1.0 + c), "{law} k={k}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn loose_strategies_are_flagged() {
        let spec = unit_psi(3, TimeLaw::GammaUnconditional);
        let exact = psi_k(&spec, &PsiStrategy::Quadrature).unwrap();
        assert!(!exact.upper_bound);
        for strat in [PsiStrategy::LooseFirstTerm, PsiStrategy::LooseMaxNng, PsiStrategy::LooseSumExp] {
            let v = psi_k(&spec, &strat).unwrap();
            assert!(v.upper_bound);
            assert!(v.value >= exact.value - 1e-9, "{}: {} < {}", v.strategy, v.value, exact.value);
        }
    }

    #[test]
    fn psi_derivative_sign_by_law() {
        let spec = unit_psi(2, TimeLaw::GammaUnconditional);
        assert_eq!(psi_k_derivative(&spec, &PsiStrategy::Quadrature, 0.5).unwrap(), 0.0);
        let spec = unit_psi(2, TimeLaw::UniformOrderStatistics);
        let d = psi_k_derivative(&spec, &PsiStrategy::Quadrature, 0.5).unwrap();
        // ψ(s,τ) = 2k(1-e^{-τ})/τ + 2k(k-1)(τ-1+e^{-τ})/τ²
        let f = |x: f64| 4.0 * (1.0 - (-x).exp()) / x + 4.0 * (x - 1.0 + (-x).exp()) / (x * x);
        let fd = (f(0.5 + 1e-6) - f(0.5 - 1e-6)) / 2e-6;
        assert!((d - fd).abs() < 1e-5);
        assert!(d < 0.0);
    }

    #[test]
    fn ltv_bound_examples() {
        let env = TransitionEnvelope {
            kappa: 1.0,
            beta: 1.0,
            fit_domain: vec![],
            margin: 0.0,
        };
        let ric = RiccatiConstants {
            alpha: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
        };
        let mut spec = unit_psi(0, TimeLaw::GammaUnconditional);
        spec.d0 = 0.0;
        let b = shot_ltv_bound(ric, &env, &spec, &PsiStrategy::Quadrature, 1.0, 0.0, 1.0).unwrap();
        assert!((b.rhs(0.3, 0.0, 1.0).unwrap() - 0.3 * (-2.0f64).exp()).abs() < 1e-15);

        for law in [TimeLaw::GammaUnconditional, TimeLaw::UniformOrderStatistics] {
            spec.k = 3;
            spec.time_law = law;
            let k1 = shot_ltv_bound(ric, &env, &spec, &PsiStrategy::Quadrature, 1.0, 0.0, 1.0)
                .unwrap()
                .kappa(0.0, 1.0)
                .unwrap();
            let k2 = shot_ltv_bound(ric, &env, &spec, &PsiStrategy::Quadrature, 2.0, 0.0, 1.0)
                .unwrap()
                .kappa(0.0, 1.0)
                .unwrap();
            assert!((k2 - 4.0 * k1).abs() < 1e-6 * k2.abs(), "{law}: {k1} {k2}");
        }
    }

    #[test]
    fn comparison_examples() {
        let r = comparison_rhs(0.5, 2.0, 1.5, &HFunction::constant(2.0), 1.0).unwrap();
        assert!((r - 2.5 * (-1.5f64).exp()).abs() < 1e-14);
        let r = comparison_rhs(0.5, 2.0, 1.5, &HFunction::affine(2.0, 0.3, 0.0), 1.0).unwrap();
        let exact = 0.3 * (1.0 - (-1.5f64).exp()) / 1.5 + 2.5 * (-1.5f64).exp();
        assert!((r - exact).abs() < 1e-10);
        assert_eq!(comparison_rhs(0.5, 2.0, 1.5, &HFunction::constant(2.0), 0.0).unwrap(), 2.5);
    }

    #[test]
    fn bounds_csv_header() {
        let c = cert(1.0, (1.0, 1.0, 0.0, 0.0));
        let row = white_bound(&c, 1.0, 0.0, 1.0).unwrap().row(0.0, 0.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_bounds_csv(&mut buf, &[row], &Provenance::new("ou", 7)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind,k,s,t,beta,kappa,rhs_total,strategy,std_err,experiment,seed,version\nwhite,0,0,1,"));
    }
}
