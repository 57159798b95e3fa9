//! Reproducible random streams and the samplers built on them.
//!
//! Every sample path owns a [`RandomStream`], a `(seed, stream_id)` pair that
//! maps onto a ChaCha8 keystream. Within a stream, independent [`Channel`]s
//! sit at disjoint word offsets of the same keystream, so Brownian
//! increments, jump times and jump marks never share draws. That keeps a
//! path's Brownian sequence unchanged when its jump configuration changes,
//! which is what seed-matched comparisons between model variants rely on.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{invalid, Error, Result};

/// The concrete generator behind every stream.
pub type StreamRng = ChaCha8Rng;

/// Independent sub-sequences of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Brownian = 0,
    JumpTimes = 1,
    Marks = 2,
    InitialCondition = 3,
    Auxiliary = 4,
}

/// A counter-based random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Generator positioned at the start of `channel`.
    pub fn channel(&self, channel: Channel) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        // 2^68 words per stream; 16 channels of 2^64 words each.
        rng.set_word_pos((channel as u128) << 64);
        rng
    }
}

impl fmt::Display for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.seed, self.stream_id)
    }
}

/// Bounds on the noise terms: `‖σ‖ ≤ gamma`, `‖ξ‖ ≤ eta`, Poisson rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBounds {
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl NoiseBounds {
    pub fn new(gamma: f64, eta: f64, lambda: f64) -> Result<Self> {
        let b = Self { gamma, eta, lambda };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be finite and > 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Jump arrival times and the marks applied at them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpRecord {
    pub arrival_times: Vec<f64>,
    pub marks: Vec<DVector<f64>>,
}

impl JumpRecord {
    pub fn new(arrival_times: Vec<f64>, marks: Vec<DVector<f64>>) -> Result<Self> {
        if arrival_times.len() != marks.len() {
            return Err(Error::DimensionMismatch {
                expected: arrival_times.len(),
                got: marks.len(),
            });
        }
        check_strictly_increasing(&arrival_times)?;
        Ok(Self {
            arrival_times,
            marks,
        })
    }

    pub fn len(&self) -> usize {
        self.arrival_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrival_times.is_empty()
    }

    /// Number of arrivals in the half-open window `(s, t]`.
    pub fn count_in(&self, s: f64, t: f64) -> usize {
        self.arrival_times
            .iter()
            .filter(|&&time| time > s && time <= t)
            .count()
    }

    pub fn max_mark_norm(&self) -> f64 {
        self.marks.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }
}

type CustomSampler = Arc<dyn Fn(&mut StreamRng) -> DVector<f64> + Send + Sync>;

/// Distribution of a single jump vector.
#[derive(Clone)]
pub enum MarkLaw {
    /// Deterministic mark.
    Constant(DVector<f64>),
    /// Uniform on the closed ball of the given radius.
    UniformBall { dim: usize, radius: f64 },
    /// Isotropic Gaussian conditioned on `‖ξ‖ ≤ eta` (rejection sampling).
    TruncatedGaussian { dim: usize, sigma: f64 },
    /// User sampler. Only accepted with `truncate = true`, in which case
    /// draws are radially clipped to the ball of radius `eta`.
    Custom {
        dim: usize,
        sampler: CustomSampler,
        truncate: bool,
    },
}

impl fmt::Debug for MarkLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkLaw::Constant(v) => f.debug_tuple("Constant").field(&v.as_slice()).finish(),
            MarkLaw::UniformBall { dim, radius } => f
                .debug_struct("UniformBall")
                .field("dim", dim)
                .field("radius", radius)
                .finish(),
            MarkLaw::TruncatedGaussian { dim, sigma } => f
                .debug_struct("TruncatedGaussian")
                .field("dim", dim)
                .field("sigma", sigma)
                .finish(),
            MarkLaw::Custom { dim, truncate, .. } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("truncate", truncate)
                .finish_non_exhaustive(),
        }
    }
}

/// Rejections allowed per truncated-Gaussian draw before falling back to
/// radial clipping.
const MAX_REJECTIONS: usize = 100_000;

impl MarkLaw {
    pub fn dim(&self) -> usize {
        match self {
            MarkLaw::Constant(v) => v.len(),
            MarkLaw::UniformBall { dim, .. }
            | MarkLaw::TruncatedGaussian { dim, .. }
            | MarkLaw::Custom { dim, .. } => *dim,
        }
    }

    /// Rejects laws that can produce marks with norm above `eta`.
    pub fn validate(&self, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("mark bound must be > 0, got {eta}")));
        }
        match self {
            MarkLaw::Constant(v) => {
                let n = v.norm();
                if n > eta * (1.0 + 1e-12) {
                    return Err(Error::UnboundedMarkLaw(format!(
                        "constant mark has norm {n} > eta = {eta}"
                    )));
                }
            }
            MarkLaw::UniformBall { radius, .. } => {
                if !(*radius >= 0.0) || *radius > eta * (1.0 + 1e-12) {
                    return Err(Error::UnboundedMarkLaw(format!(
                        "ball radius {radius} exceeds eta = {eta}"
                    )));
                }
            }
            MarkLaw::TruncatedGaussian { sigma, .. } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid("sigma", format!("must be > 0, got {sigma}")));
                }
            }
            MarkLaw::Custom { truncate, .. } => {
                if !truncate {
                    return Err(Error::UnboundedMarkLaw(
                        "custom mark law without norm truncation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// One draw; assumes `validate(eta)` has passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, eta: f64) -> DVector<f64> {
        match self {
            MarkLaw::Constant(v) => v.clone(),
            MarkLaw::UniformBall { dim, radius } => {
                let dir = standard_normal_vector(rng, *dim);
                let n = dir.norm();
                if n == 0.0 {
                    return DVector::zeros(*dim);
                }
                let u: f64 = rng.random();
                dir * (radius * u.powf(1.0 / *dim as f64) / n)
            }
            MarkLaw::TruncatedGaussian { dim, sigma } => {
                for _ in 0..MAX_REJECTIONS {
                    let v = standard_normal_vector(rng, *dim) * *sigma;
                    if v.norm() <= eta {
                        return v;
                    }
                }
                clip(standard_normal_vector(rng, *dim) * *sigma, eta)
            }
            MarkLaw::Custom { sampler, .. } => {
                // Custom samplers need the concrete generator type; draw a
                // fresh seed from `rng` so the caller's stream still advances
                // deterministically.
                let mut inner = ChaCha8Rng::seed_from_u64(rng.random());
                clip(sampler(&mut inner), eta)
            }
        }
    }
}

fn clip(v: DVector<f64>, eta: f64) -> DVector<f64> {
    let n = v.norm();
    if n > eta {
        v * (eta / n)
    } else {
        v
    }
}

pub(crate) fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn check_window(s: f64, t: f64) -> Result<()> {
    if !(s.is_finite() && t.is_finite() && s < t) {
        return Err(Error::InvalidWindow { start: s, end: t });
    }
    Ok(())
}

fn check_strictly_increasing(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotoneGrid {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    Ok(())
}

/// Arrival times of a rate-`lambda` Poisson process on `(s, t]`, built from
/// cumulative exponential interarrivals.
pub fn sample_poisson_times<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: f64,
    window: (f64, f64),
) -> Result<Vec<f64>> {
    let (s, t) = window;
    check_window(s, t)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be > 0, got {lambda}")));
    }
    let exp = Exp::new(lambda).map_err(|e| invalid("lambda", e.to_string()))?;
    let mut times = Vec::new();
    let mut clock = s;
    loop {
        clock += exp.sample(rng);
        if clock > t {
            break;
        }
        // A zero interarrival would duplicate a time; it has probability 0
        // but floating point can still produce it.
        if times.last().is_some_and(|&last| clock <= last) {
            continue;
        }
        times.push(clock);
    }
    Ok(times)
}

/// Exactly `k` arrival times on `[s, t]`, distributed as the order
/// statistics of `k` i.i.d. uniforms: the law of Poisson arrivals given
/// that `k` of them fall in the window.
pub fn sample_conditional_times<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    window: (f64, f64),
) -> Result<Vec<f64>> {
    let (s, t) = window;
    check_window(s, t)?;
    loop {
        let mut times: Vec<f64> = (0..k)
            .map(|_| {
                // (0, 1] so that no arrival lands exactly on `s`
                let u: f64 = 1.0 - rng.random::<f64>();
                s + (t - s) * u
            })
            .collect();
        times.sort_by(f64::total_cmp);
        if check_strictly_increasing(&times).is_ok() {
            return Ok(times);
        }
    }
}

/// Brownian increments `ΔW_i ~ N(0, (t_{i+1} - t_i) I_dim)` over `grid`.
///
/// Zero-length steps are allowed and give zero increments; decreasing
/// steps are rejected.
pub fn sample_brownian_increments<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &[f64],
    dim: usize,
) -> Result<Vec<DVector<f64>>> {
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] >= w[0]) {
            return Err(Error::NonMonotoneGrid {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    Ok(grid
        .windows(2)
        .map(|w| brownian_increment(rng, w[1] - w[0], dim))
        .collect())
}

pub(crate) fn brownian_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64, dim: usize) -> DVector<f64> {
    let z = standard_normal_vector(rng, dim);
    if dt == 0.0 {
        return DVector::zeros(dim);
    }
    z * dt.sqrt()
}

/// `k` jump vectors from `law`, each with norm at most `eta`.
pub fn sample_marks<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    law: &MarkLaw,
    eta: f64,
) -> Result<Vec<DVector<f64>>> {
    law.validate(eta)?;
    Ok((0..k).map(|_| law.sample(rng, eta)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(stream: u64) -> StreamRng {
        RandomStream::new(7, stream).channel(Channel::JumpTimes)
    }

    #[test]
    fn poisson_mean_count() {
        let mut r = rng(0);
        let n = 100_000;
        let total: usize = (0..n)
            .map(|_| sample_poisson_times(&mut r, 1.0, (0.0, 1.0)).unwrap().len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean count {mean}");
    }

    #[test]
    fn poisson_single_jump_probability() {
        let mut r = rng(1);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_poisson_times(&mut r, 2.0, (0.0, 0.5)).unwrap().len() == 1)
            .count();
        let p = ones as f64 / n as f64;
        assert!((p - (-1.0f64).exp()).abs() < 0.005, "P(count=1) = {p}");
    }

    #[test]
    fn degenerate_window_rejected() {
        let mut r = rng(2);
        assert!(matches!(
            sample_poisson_times(&mut r, 1.0, (0.0, 0.0)),
            Err(Error::InvalidWindow { .. })
        ));
        assert!(sample_conditional_times(&mut r, 2, (1.0, 0.5)).is_err());
    }

    #[test]
    fn poisson_times_inside_window_and_sorted() {
        let mut r = rng(3);
        for _ in 0..1000 {
            let times = sample_poisson_times(&mut r, 5.0, (2.0, 3.0)).unwrap();
            assert!(times.iter().all(|&t| t > 2.0 && t <= 3.0));
            assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn conditional_zero_jumps_is_empty() {
        let mut r = rng(4);
        assert!(sample_conditional_times(&mut r, 0, (0.0, 1.0)).unwrap().is_empty());
    }

    #[test]
    fn conditional_order_statistic_means() {
        let mut r = rng(5);
        let n = 100_000;
        let mean1: f64 = (0..n)
            .map(|_| sample_conditional_times(&mut r, 1, (0.0, 1.0)).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean1 - 0.5).abs() < 0.005, "{mean1}");
        let mean_min: f64 = (0..n)
            .map(|_| sample_conditional_times(&mut r, 2, (0.0, 1.0)).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean_min - 1.0 / 3.0).abs() < 0.005, "{mean_min}");
    }

    #[test]
    fn brownian_variance_and_independence() {
        let mut r = RandomStream::new(11, 0).channel(Channel::Brownian);
        let n = 100_000;
        let mut s11 = 0.0;
        let mut s12 = 0.0;
        let mut s1 = 0.0;
        for _ in 0..n {
            let dw = &sample_brownian_increments(&mut r, &[0.0, 1.0], 2).unwrap()[0];
            s1 += dw[0];
            s11 += dw[0] * dw[0];
            s12 += dw[0] * dw[1];
        }
        let nf = n as f64;
        let var = s11 / nf - (s1 / nf).powi(2);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!((s12 / nf).abs() < 0.02, "cross covariance {}", s12 / nf);
    }

    #[test]
    fn brownian_zero_step_and_bad_grid() {
        let mut r = rng(6);
        let inc = sample_brownian_increments(&mut r, &[0.0, 0.5, 0.5, 1.0], 3).unwrap();
        assert_eq!(inc[1], DVector::zeros(3));
        assert!(matches!(
            sample_brownian_increments(&mut r, &[0.0, 1.0, 0.5], 1),
            Err(Error::NonMonotoneGrid { index: 2, .. })
        ));
    }

    #[test]
    fn constant_marks_are_copies() {
        let mut r = rng(7);
        let v = DVector::from_vec(vec![0.5, 0.0]);
        let marks = sample_marks(&mut r, 3, &MarkLaw::Constant(v.clone()), 0.5).unwrap();
        assert_eq!(marks, vec![v.clone(), v.clone(), v]);
    }

    #[test]
    fn ball_and_truncated_gaussian_respect_eta() {
        let mut r = rng(8);
        let ball = MarkLaw::UniformBall { dim: 2, radius: 0.5 };
        let marks = sample_marks(&mut r, 100_000, &ball, 0.5).unwrap();
        assert!(marks.iter().all(|m| m.norm() <= 0.5));
        let tg = MarkLaw::TruncatedGaussian { dim: 2, sigma: 10.0 };
        let marks = sample_marks(&mut r, 2_000, &tg, 1.0).unwrap();
        assert!(marks.iter().all(|m| m.norm() <= 1.0));
    }

    #[test]
    fn unbounded_laws_rejected() {
        let mut r = rng(9);
        let big = MarkLaw::Constant(DVector::from_vec(vec![2.0, 0.0]));
        assert!(matches!(
            sample_marks(&mut r, 1, &big, 1.0),
            Err(Error::UnboundedMarkLaw(_))
        ));
        let sampler: CustomSampler = Arc::new(|r: &mut StreamRng| standard_normal_vector(r, 2) * 100.0);
        let raw = MarkLaw::Custom {
            dim: 2,
            sampler: sampler.clone(),
            truncate: false,
        };
        assert!(sample_marks(&mut r, 1, &raw, 1.0).is_err());
        let wrapped = MarkLaw::Custom {
            dim: 2,
            sampler,
            truncate: true,
        };
        let marks = sample_marks(&mut r, 500, &wrapped, 1.0).unwrap();
        assert!(marks.iter().all(|m| m.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn streams_replay_and_differ() {
        let a: Vec<u64> = {
            let mut r = RandomStream::new(3, 4).channel(Channel::Marks);
            (0..8).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RandomStream::new(3, 4).channel(Channel::Marks);
            (0..8).map(|_| r.random()).collect()
        };
        let c: Vec<u64> = {
            let mut r = RandomStream::new(3, 5).channel(Channel::Marks);
            (0..8).map(|_| r.random()).collect()
        };
        let d: Vec<u64> = {
            let mut r = RandomStream::new(3, 4).channel(Channel::Brownian);
            (0..8).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn noise_bounds_validation() {
        assert!(NoiseBounds::new(0.0, 0.0, 1.0).is_ok());
        assert!(NoiseBounds::new(-1.0, 0.0, 1.0).is_err());
        assert!(NoiseBounds::new(0.0, 0.0, 0.0).is_err());
    }
}
