//! Model definitions for nominal, white-noise, shot-noise and Lévy-noise
//! systems, the linear time-varying (LTV) shot-noise specialization, and
//! the sample-path container shared by the integrators.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::noise::{JumpRecord, MarkLaw, NoiseBounds, RandomStream};

pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type JumpMapFn = Arc<dyn Fn(f64, &DVector<f64>) -> MarkLaw + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type JumpSignalFn = Arc<dyn Fn(f64) -> MarkLaw + Send + Sync>;
/// `(tau, t) -> ∫_tau^t A(r) dr`.
pub type IntegralFn = Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>;

/// Which noise terms a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nominal,
    White,
    Shot,
    Levy,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nominal => "nominal",
            ModelKind::White => "white",
            ModelKind::Shot => "shot",
            ModelKind::Levy => "levy",
        })
    }
}

/// `dx = f(t,x) dt + σ(t,x) dW + ξ(t,x) dN`.
///
/// Dropping `diffusion` gives the shot-noise system, dropping `jump_map`
/// the white-noise system, dropping both the nominal ODE.
#[derive(Clone)]
pub struct LevySystemModel {
    pub name: String,
    pub dim: usize,
    /// Dimension of the driving Brownian motion.
    pub noise_dim: usize,
    pub drift: DriftFn,
    pub diffusion: Option<DiffusionFn>,
    pub jump_map: Option<JumpMapFn>,
    pub noise: NoiseBounds,
}

impl fmt::Debug for LevySystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevySystemModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kind", &self.kind())
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl LevySystemModel {
    /// Nominal (noise-free) model; attach noise with the `with_*` methods.
    pub fn new(name: impl Into<String>, dim: usize, drift: DriftFn, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "state dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            noise_dim: 0,
            drift,
            diffusion: None,
            jump_map: None,
            noise: NoiseBounds::new(0.0, 0.0, lambda)?,
        })
    }

    pub fn with_diffusion(mut self, noise_dim: usize, gamma: f64, diffusion: DiffusionFn) -> Result<Self> {
        if noise_dim == 0 {
            return Err(invalid("noise_dim", "Brownian dimension must be positive"));
        }
        self.noise_dim = noise_dim;
        self.diffusion = Some(diffusion);
        self.noise = NoiseBounds::new(gamma, self.noise.eta, self.noise.lambda)?;
        Ok(self)
    }

    pub fn with_jumps(mut self, eta: f64, jump_map: JumpMapFn) -> Result<Self> {
        self.jump_map = Some(jump_map);
        self.noise = NoiseBounds::new(self.noise.gamma, eta, self.noise.lambda)?;
        Ok(self)
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.is_some() && self.noise.gamma > 0.0
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_map.is_some() && self.noise.eta > 0.0
    }

    pub fn kind(&self) -> ModelKind {
        match (self.has_diffusion(), self.has_jumps()) {
            (false, false) => ModelKind::Nominal,
            (true, false) => ModelKind::White,
            (false, true) => ModelKind::Shot,
            (true, true) => ModelKind::Levy,
        }
    }

    /// Same drift, no noise terms.
    pub fn nominal(&self) -> Self {
        Self {
            name: self.name.clone(),
            dim: self.dim,
            noise_dim: 0,
            drift: self.drift.clone(),
            diffusion: None,
            jump_map: None,
            noise: NoiseBounds {
                gamma: 0.0,
                eta: 0.0,
                lambda: self.noise.lambda,
            },
        }
    }

    pub fn drift_at(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }
}

/// `dx = A(t) x dt + ξ(t) dN` with state-independent marks.
#[derive(Clone)]
pub struct LtvSystemModel {
    pub name: String,
    pub dim: usize,
    pub a_matrix: MatrixFn,
    pub jump_signal: Option<JumpSignalFn>,
    pub noise: NoiseBounds,
    /// Closed-form `∫_tau^t A`, only valid when `A(t)` commutes with its
    /// integral (diagonal or constant `A`).
    pub a_integral: Option<IntegralFn>,
}

impl fmt::Debug for LtvSystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LtvSystemModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise", &self.noise)
            .field("closed_form", &self.a_integral.is_some())
            .finish_non_exhaustive()
    }
}

impl LtvSystemModel {
    pub fn new(name: impl Into<String>, dim: usize, a_matrix: MatrixFn, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "state dimension must be positive"));
        }
        let a0 = a_matrix(0.0);
        if a0.nrows() != dim || a0.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: a0.nrows(),
            });
        }
        Ok(Self {
            name: name.into(),
            dim,
            a_matrix,
            jump_signal: None,
            noise: NoiseBounds::new(0.0, 0.0, lambda)?,
            a_integral: None,
        })
    }

    pub fn with_jumps(mut self, eta: f64, signal: JumpSignalFn) -> Result<Self> {
        self.jump_signal = Some(signal);
        self.noise = NoiseBounds::new(0.0, eta, self.noise.lambda)?;
        Ok(self)
    }

    pub fn with_closed_form(mut self, integral: IntegralFn) -> Self {
        self.a_integral = Some(integral);
        self
    }

    /// Constant `A`, closed form attached.
    pub fn constant(name: impl Into<String>, a: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let dim = a.nrows();
        let a_for_integral = a.clone();
        Ok(Self::new(name, dim, Arc::new(move |_| a.clone()), lambda)?
            .with_closed_form(Arc::new(move |tau, t| &a_for_integral * (t - tau))))
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_signal.is_some() && self.noise.eta > 0.0
    }

    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        (self.a_matrix)(t)
    }

    pub fn nominal(&self) -> Self {
        Self {
            jump_signal: None,
            noise: NoiseBounds {
                gamma: 0.0,
                eta: 0.0,
                lambda: self.noise.lambda,
            },
            ..self.clone()
        }
    }

    /// The same system as a general model with drift `A(t) x`.
    pub fn to_levy(&self) -> LevySystemModel {
        let a = self.a_matrix.clone();
        let jump_map: Option<JumpMapFn> = self.jump_signal.clone().map(|signal| {
            let m: JumpMapFn = Arc::new(move |t, _x| signal(t));
            m
        });
        LevySystemModel {
            name: self.name.clone(),
            dim: self.dim,
            noise_dim: 0,
            drift: Arc::new(move |t, x| a(t) * x),
            diffusion: None,
            jump_map,
            noise: self.noise,
        }
    }

    /// Finite-difference continuity probe of `A(t)` at `samples` points of
    /// `horizon`: a jump shows up as an increment that does not shrink with
    /// the probe step.
    pub fn probe_continuity(&self, horizon: (f64, f64), samples: usize) -> Result<()> {
        let (s, t) = horizon;
        let n = samples.max(2);
        for i in 0..n {
            let tau = s + (t - s) * i as f64 / (n - 1) as f64;
            let a = self.a_at(tau);
            let scale = 1.0 + a.norm();
            let coarse = (self.a_at(tau + 1e-4) - &a).norm();
            let fine = (self.a_at(tau + 1e-7) - &a).norm();
            if fine > 1e-5 * scale && fine > 0.5 * coarse {
                return Err(Error::Structural {
                    time: tau,
                    reason: format!("A(t) appears discontinuous (increment {fine:e} at step 1e-7)"),
                });
            }
        }
        Ok(())
    }
}

/// Models that have a noise-free counterpart.
pub trait HasNominal {
    fn nominal(&self) -> Self;
}

impl HasNominal for LevySystemModel {
    fn nominal(&self) -> Self {
        LevySystemModel::nominal(self)
    }
}

impl HasNominal for LtvSystemModel {
    fn nominal(&self) -> Self {
        LtvSystemModel::nominal(self)
    }
}

pub fn nominal_of<M: HasNominal>(model: &M) -> M {
    model.nominal()
}

/// One realization on a jump-adapted grid.
///
/// At a jump time `states[i]` is the post-jump value and `left_limits[i]`
/// holds `x(T_i-)`; elsewhere `left_limits[i]` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub left_limits: Vec<Option<DVector<f64>>>,
    pub jumps: JumpRecord,
    pub stream: Option<RandomStream>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_jump(&self, index: usize) -> bool {
        self.left_limits[index].is_some()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty path")
    }

    pub fn jump_count(&self, s: f64, t: f64) -> usize {
        self.jumps.count_in(s, t)
    }

    /// Right-continuous state at `t`, linearly interpolated between grid
    /// points (the path is continuous off jump times).
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        const SNAP: f64 = 1e-10;
        let first = self.times[0];
        if t <= first {
            return self.states[0].clone();
        }
        // last index with time <= t + SNAP
        let idx = self.times.partition_point(|&ti| ti <= t + SNAP);
        let i = idx.saturating_sub(1);
        if (self.times[i] - t).abs() <= SNAP || i + 1 >= self.times.len() {
            return self.states[i].clone();
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        let right = self.left_limits[i + 1].as_ref().unwrap_or(&self.states[i + 1]);
        &self.states[i] * (1.0 - w) + right * w
    }
}

/// `Φ(t, tau)` for `dΦ/dt = A(t) Φ`, `Φ(tau, tau) = I`.
///
/// Uses `exp(∫A)` when the model declares a closed form; otherwise RK4 with
/// step `min(tol^{1/4}, (t - tau)/100)`, refined by step doubling until the
/// Richardson error estimate drops below `tol`.
pub fn transition_matrix(model: &LtvSystemModel, tau: f64, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    if tau > t {
        return Err(Error::InvalidWindow { start: tau, end: t });
    }
    let n = model.dim;
    if tau == t {
        return Ok(DMatrix::identity(n, n));
    }
    if let Some(integral) = &model.a_integral {
        return Ok(integral(tau, t).exp());
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be > 0, got {tol}")));
    }
    let span = t - tau;
    let h0 = tol.powf(0.25).min(span / 100.0);
    let mut steps = (span / h0).ceil() as usize;
    let mut coarse = rk4_transition(model, tau, t, steps);
    const MAX_STEPS: usize = 1 << 22;
    loop {
        let fine = rk4_transition(model, tau, t, 2 * steps);
        let estimate = (&fine - &coarse).norm() / 15.0;
        if estimate <= tol {
            return Ok(fine);
        }
        steps *= 2;
        if 2 * steps > MAX_STEPS {
            return Err(Error::NonConvergence {
                what: "state-transition matrix",
                residual: estimate,
                target: tol,
            });
        }
        coarse = fine;
    }
}

fn rk4_transition(model: &LtvSystemModel, tau: f64, t: f64, steps: usize) -> DMatrix<f64> {
    let n = model.dim;
    let h = (t - tau) / steps as f64;
    let mut phi = DMatrix::<f64>::identity(n, n);
    for i in 0..steps {
        let r = tau + i as f64 * h;
        let a0 = model.a_at(r);
        let am = model.a_at(r + 0.5 * h);
        let a1 = model.a_at(r + h);
        let k1 = &a0 * &phi;
        let k2 = &am * (&phi + &k1 * (0.5 * h));
        let k3 = &am * (&phi + &k2 * (0.5 * h));
        let k4 = &a1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_model() -> LtvSystemModel {
        LtvSystemModel::constant("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])), 1.0)
            .unwrap()
    }

    fn triangular_model() -> LtvSystemModel {
        LtvSystemModel::new(
            "tri",
            2,
            Arc::new(|t| DMatrix::from_row_slice(2, 2, &[-1.0, t, 0.0, -2.0])),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn diagonal_transition_is_exponential() {
        let phi = transition_matrix(&diag_model(), 0.0, 1.0, 1e-10).unwrap();
        assert!((phi[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((phi[(1, 1)] - (-2.0f64).exp()).abs() < 1e-14);
        assert_eq!(phi[(0, 1)], 0.0);
        // same result without the closed form
        let mut m = diag_model();
        m.a_integral = None;
        let rk = transition_matrix(&m, 0.0, 1.0, 1e-10).unwrap();
        assert!((rk - phi).norm() < 1e-9);
    }

    #[test]
    fn transition_at_equal_times_is_identity() {
        let phi = transition_matrix(&triangular_model(), 0.7, 0.7, 1e-8).unwrap();
        assert_eq!(phi, DMatrix::identity(2, 2));
    }

    #[test]
    fn transition_rejects_reversed_times() {
        assert!(transition_matrix(&triangular_model(), 1.0, 0.0, 1e-8).is_err());
    }

    #[test]
    fn semigroup_property() {
        let m = triangular_model();
        let tol = 1e-9;
        for &(s, r, t) in &[(0.0, 0.3, 1.0), (0.2, 0.9, 2.5), (1.0, 1.0, 1.5)] {
            let full = transition_matrix(&m, s, t, tol).unwrap();
            let split = transition_matrix(&m, r, t, tol).unwrap() * transition_matrix(&m, s, r, tol).unwrap();
            assert!((full - split).norm() <= 10.0 * tol);
        }
    }

    #[test]
    fn nominal_is_idempotent_and_drops_noise() {
        let drift: DriftFn = Arc::new(|_, x| -x);
        let m = LevySystemModel::new("ou", 1, drift, 1.0)
            .unwrap()
            .with_diffusion(1, 1.0, Arc::new(|_, _| DMatrix::from_element(1, 1, 1.0)))
            .unwrap()
            .with_jumps(1.0, Arc::new(|_, _| MarkLaw::Constant(DVector::from_element(1, 1.0))))
            .unwrap();
        assert_eq!(m.kind(), ModelKind::Levy);
        let n = nominal_of(&m);
        assert_eq!(n.kind(), ModelKind::Nominal);
        assert_eq!((n.noise.gamma, n.noise.eta), (0.0, 0.0));
        let nn = nominal_of(&n);
        assert_eq!(nn.kind(), ModelKind::Nominal);
        assert_eq!(nn.noise, n.noise);
        let x = DVector::from_element(1, 2.0);
        assert_eq!(nn.drift_at(0.3, &x), m.drift_at(0.3, &x));
    }

    #[test]
    fn continuity_probe_flags_step() {
        let smooth = triangular_model();
        assert!(smooth.probe_continuity((0.0, 5.0), 50).is_ok());
        let step = LtvSystemModel::new(
            "step",
            1,
            Arc::new(|t| DMatrix::from_element(1, 1, if t < 1.00000005 { -1.0 } else { -3.0 })),
            1.0,
        )
        .unwrap();
        assert!(step.probe_continuity((0.0, 2.0), 3).is_err());
    }

    #[test]
    fn state_at_interpolates_and_snaps() {
        let path = SamplePath {
            times: vec![0.0, 0.5, 1.0],
            states: vec![
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 3.0),
                DVector::from_element(1, 4.0),
            ],
            left_limits: vec![None, Some(DVector::from_element(1, 1.0)), None],
            jumps: JumpRecord::default(),
            stream: None,
        };
        assert_eq!(path.state_at(0.25)[0], 0.5);
        assert_eq!(path.state_at(0.5)[0], 3.0);
        assert_eq!(path.state_at(0.75)[0], 3.5);
        assert_eq!(path.state_at(2.0)[0], 4.0);
    }
}
