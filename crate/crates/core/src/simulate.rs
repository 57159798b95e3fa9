//! Jump-adapted Euler–Maruyama integration, the exact LTV shot-noise
//! solution, and paired (perturbed, nominal) ensembles.

use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::noise::{
    brownian_increment, sample_conditional_times, sample_poisson_times, standard_normal_vector,
    Channel, JumpRecord, RandomStream,
};
use crate::provenance::Provenance;
use crate::systems::{transition_matrix, LevySystemModel, LtvSystemModel, SamplePath};

pub const DEFAULT_BLOWUP: f64 = 1e8;

/// Drift step between grid points. Diffusion increments are always
/// Euler–Maruyama.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Classical RK4 for the drift.
    Rk4Drift,
}

fn drift_step(model: &LevySystemModel, scheme: Scheme, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    match scheme {
        Scheme::EulerMaruyama => x + model.drift_at(t, x) * h,
        Scheme::Rk4Drift => rk4_step(model, t, x, h),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub horizon: (f64, f64),
    pub tol: f64,
    pub blowup: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: (f64, f64)) -> Self {
        Self {
            dt,
            scheme: Scheme::EulerMaruyama,
            horizon,
            tol: 1e-8,
            blowup: DEFAULT_BLOWUP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, t) = self.horizon;
        if !(s.is_finite() && t.is_finite() && s < t) {
            return Err(Error::InvalidWindow { start: s, end: t });
        }
        if !(self.dt > 0.0 && self.dt <= t - s) {
            return Err(invalid("dt", format!("need 0 < dt <= {}, got {}", t - s, self.dt)));
        }
        if !(self.blowup > 0.0) {
            return Err(invalid("blowup", "threshold must be positive"));
        }
        Ok(())
    }

    /// `s, s + dt, …, t` (the final step may be shorter).
    pub fn uniform_grid(&self) -> Vec<f64> {
        let (s, t) = self.horizon;
        let n = ((t - s) / self.dt - 1e-9).ceil().max(1.0) as usize;
        let mut grid: Vec<f64> = (0..n).map(|i| s + i as f64 * self.dt).collect();
        grid.push(t);
        grid
    }
}

/// How jump times are placed on the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpSchedule {
    /// Poisson arrivals at the model's rate.
    Poisson,
    /// Exactly `k` arrivals, uniform order statistics on the horizon.
    Conditional(usize),
    /// Caller-supplied arrival times.
    Fixed(Vec<f64>),
}

/// Integrates with Poisson-distributed jump times.
pub fn integrate(
    model: &LevySystemModel,
    x0: &DVector<f64>,
    cfg: &IntegratorConfig,
    stream: RandomStream,
) -> Result<SamplePath> {
    integrate_scheduled(model, x0, cfg, stream, &JumpSchedule::Poisson)
}

/// Jump-adapted integration: Euler–Maruyama on the union of the uniform
/// grid and the jump times, with `x(T_i) = x(T_i-) + ξ` applied exactly.
pub fn integrate_scheduled(
    model: &LevySystemModel,
    x0: &DVector<f64>,
    cfg: &IntegratorConfig,
    stream: RandomStream,
    schedule: &JumpSchedule,
) -> Result<SamplePath> {
    cfg.validate()?;
    if x0.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(invalid("x0", "initial state must be finite"));
    }
    let (s, t) = cfg.horizon;
    let jump_times = if model.has_jumps() {
        let mut rng = stream.channel(Channel::JumpTimes);
        match schedule {
            JumpSchedule::Poisson => sample_poisson_times(&mut rng, model.noise.lambda, cfg.horizon)?,
            JumpSchedule::Conditional(k) => sample_conditional_times(&mut rng, *k, cfg.horizon)?,
            JumpSchedule::Fixed(times) => {
                if times.iter().any(|&tj| !(tj > s && tj <= t)) {
                    return Err(invalid("jump_times", format!("must lie in ({s}, {t}]")));
                }
                JumpRecord::new(times.clone(), vec![DVector::zeros(model.dim); times.len()])?;
                times.clone()
            }
        }
    } else {
        Vec::new()
    };

    let grid = merge_grid(&cfg.uniform_grid(), &jump_times);
    let mut brownian = stream.channel(Channel::Brownian);
    let mut mark_rng = stream.channel(Channel::Marks);
    let eta = model.noise.eta;

    let mut states = Vec::with_capacity(grid.len());
    let mut left_limits = Vec::with_capacity(grid.len());
    let mut marks = Vec::with_capacity(jump_times.len());
    let mut x = x0.clone();
    states.push(x.clone());
    left_limits.push(None);
    let mut next_jump = 0;

    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let mut next = drift_step(model, cfg.scheme, t0, &x, h);
        if model.has_diffusion() {
            let sigma = (model.diffusion.as_ref().expect("diffusion"))(t0, &x);
            let frob = sigma.norm();
            if frob > model.noise.gamma * (1.0 + 1e-9) {
                return Err(Error::NoiseBoundViolated {
                    time: t0,
                    what: "diffusion",
                    norm: frob,
                    bound: model.noise.gamma,
                });
            }
            next += sigma * brownian_increment(&mut brownian, h, model.noise_dim);
        }
        x = next;
        let is_jump = next_jump < jump_times.len() && jump_times[next_jump] == t1;
        if is_jump {
            next_jump += 1;
            let law = (model.jump_map.as_ref().expect("jump map"))(t1, &x);
            law.validate(eta)?;
            let mark = law.sample(&mut mark_rng, eta);
            if mark.len() != model.dim {
                return Err(Error::DimensionMismatch {
                    expected: model.dim,
                    got: mark.len(),
                });
            }
            let norm = mark.norm();
            if norm > eta * (1.0 + 1e-12) {
                return Err(Error::NoiseBoundViolated {
                    time: t1,
                    what: "jump",
                    norm,
                    bound: eta,
                });
            }
            let left = x.clone();
            x += &mark;
            marks.push(mark);
            left_limits.push(Some(left));
        } else {
            left_limits.push(None);
        }
        let norm = x.norm();
        if !(norm <= cfg.blowup) {
            return Err(Error::BlowUp {
                time: t1,
                norm,
                threshold: cfg.blowup,
            });
        }
        states.push(x.clone());
    }

    Ok(SamplePath {
        times: grid,
        states,
        left_limits,
        jumps: JumpRecord {
            arrival_times: jump_times,
            marks,
        },
        stream: Some(stream),
    })
}

/// The drift ODE on a caller-supplied grid. With the same scheme and grid
/// as a jump-free, diffusion-free perturbed path the two agree exactly.
pub fn integrate_nominal_on_grid(
    model: &LevySystemModel,
    y0: &DVector<f64>,
    grid: &[f64],
    scheme: Scheme,
    blowup: f64,
) -> Result<SamplePath> {
    let mut y = y0.clone();
    let mut states = Vec::with_capacity(grid.len());
    states.push(y.clone());
    for w in grid.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(Error::NonMonotoneGrid {
                index: 0,
                prev: w[0],
                next: w[1],
            });
        }
        y = drift_step(model, scheme, w[0], &y, w[1] - w[0]);
        let norm = y.norm();
        if !(norm <= blowup) {
            return Err(Error::BlowUp {
                time: w[1],
                norm,
                threshold: blowup,
            });
        }
        states.push(y.clone());
    }
    Ok(SamplePath {
        times: grid.to_vec(),
        states,
        left_limits: vec![None; grid.len()],
        jumps: JumpRecord::default(),
        stream: None,
    })
}

fn rk4_step(model: &LevySystemModel, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    if h == 0.0 {
        return x.clone();
    }
    let k1 = model.drift_at(t, x);
    let k2 = model.drift_at(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = model.drift_at(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = model.drift_at(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn merge_grid(uniform: &[f64], jumps: &[f64]) -> Vec<f64> {
    let mut grid = Vec::with_capacity(uniform.len() + jumps.len());
    let (mut i, mut j) = (0, 0);
    while i < uniform.len() || j < jumps.len() {
        let next = match (uniform.get(i), jumps.get(j)) {
            (Some(&u), Some(&v)) if u < v => {
                i += 1;
                u
            }
            (Some(&u), Some(&v)) if u == v => {
                i += 1;
                j += 1;
                u
            }
            (_, Some(&v)) => {
                j += 1;
                v
            }
            (Some(&u), None) => {
                i += 1;
                u
            }
            (None, None) => unreachable!(),
        };
        grid.push(next);
    }
    grid
}

/// `x(τ) = Φ(τ,s) x(s) + Σ_{T_i ≤ τ} Φ(τ,T_i) ξ(T_i)` on a nondecreasing `grid`,
/// evaluated through `Φ(τ,T) = Φ(τ,σ)Φ(σ,T)` one grid interval at a time.
///
/// Grid points that coincide with jump times carry the left limit as well.
pub fn integrate_ltv_exact(
    model: &LtvSystemModel,
    x0: &DVector<f64>,
    window: (f64, f64),
    jumps: &JumpRecord,
    grid: &[f64],
) -> Result<SamplePath> {
    const TOL: f64 = 1e-10;
    let (s, t) = window;
    if !(s < t) {
        return Err(Error::InvalidWindow { start: s, end: t });
    }
    if jumps.arrival_times.iter().any(|&tj| !(tj > s && tj <= t)) {
        return Err(invalid("jumps", format!("arrival times must lie in ({s}, {t}]")));
    }
    if x0.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x0.len(),
        });
    }
    let mut order: Vec<usize> = (0..jumps.len()).collect();
    order.sort_by(|&a, &b| jumps.arrival_times[a].total_cmp(&jumps.arrival_times[b]));
    let mut pending = order.into_iter().peekable();

    let mut states = Vec::with_capacity(grid.len());
    let mut left_limits = Vec::with_capacity(grid.len());
    let (mut now, mut x) = (s, x0.clone());
    for (index, &tau) in grid.iter().enumerate() {
        if tau < s || tau > t {
            return Err(invalid("grid", format!("point {tau} outside window [{s}, {t}]")));
        }
        if tau < now {
            return Err(Error::NonMonotoneGrid {
                index,
                prev: now,
                next: tau,
            });
        }
        while let Some(&j) = pending.peek().filter(|&&j| jumps.arrival_times[j] < tau) {
            let tj = jumps.arrival_times[j];
            x = transition_matrix(model, now, tj, TOL)? * x + &jumps.marks[j];
            now = tj;
            pending.next();
        }
        x = transition_matrix(model, now, tau, TOL)? * x;
        now = tau;
        let mut left = None;
        while let Some(&j) = pending.peek().filter(|&&j| jumps.arrival_times[j] == tau) {
            left.get_or_insert_with(|| x.clone());
            x += &jumps.marks[j];
            pending.next();
        }
        states.push(x.clone());
        left_limits.push(left);
    }
    Ok(SamplePath {
        times: grid.to_vec(),
        states,
        left_limits,
        jumps: jumps.clone(),
        stream: None,
    })
}

/// Initial-condition law for `(x0, y0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    /// `x0 = y0 = v`.
    Matched(DVector<f64>),
    Fixed { x0: DVector<f64>, y0: DVector<f64> },
    /// `x0 = y0 ~ N(mean, std² I)`.
    GaussianMatched { mean: DVector<f64>, std: f64 },
    /// `x0`, `y0` drawn independently from `N(mean, std² I)`.
    GaussianIndependent { mean: DVector<f64>, std: f64 },
}

impl InitLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Matched(v) => v.len(),
            InitLaw::Fixed { x0, .. } => x0.len(),
            InitLaw::GaussianMatched { mean, .. } | InitLaw::GaussianIndependent { mean, .. } => mean.len(),
        }
    }

    pub fn draw(&self, stream: RandomStream) -> (DVector<f64>, DVector<f64>) {
        let mut rng = stream.channel(Channel::InitialCondition);
        match self {
            InitLaw::Matched(v) => (v.clone(), v.clone()),
            InitLaw::Fixed { x0, y0 } => (x0.clone(), y0.clone()),
            InitLaw::GaussianMatched { mean, std } => {
                let x = mean + standard_normal_vector(&mut rng, mean.len()) * *std;
                (x.clone(), x)
            }
            InitLaw::GaussianIndependent { mean, std } => {
                let x = mean + standard_normal_vector(&mut rng, mean.len()) * *std;
                let y = mean + standard_normal_vector(&mut rng, mean.len()) * *std;
                (x, y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleMode {
    Unconditional,
    /// Exactly `k` jumps in the integration horizon.
    Conditional(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPair {
    pub perturbed: SamplePath,
    pub nominal: SamplePath,
}

impl PathPair {
    /// `‖y(t) - x(t)‖²`.
    pub fn squared_error_at(&self, t: f64) -> f64 {
        (self.nominal.state_at(t) - self.perturbed.state_at(t)).norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedEnsemble {
    pub model_name: String,
    pub pairs: Vec<PathPair>,
    pub init_law: InitLaw,
    pub mode: EnsembleMode,
    pub horizon: (f64, f64),
    pub seed: u64,
}

impl PairedEnsemble {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn jump_counts(&self, s: f64, t: f64) -> Vec<usize> {
        self.pairs.iter().map(|p| p.perturbed.jump_count(s, t)).collect()
    }
}

fn check_ensemble_args(model: &LevySystemModel, init_law: &InitLaw, cfg: &IntegratorConfig, count: usize) -> Result<()> {
    cfg.validate()?;
    if count == 0 {
        return Err(invalid("count", "ensemble needs at least one pair"));
    }
    if init_law.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: init_law.dim(),
        });
    }
    Ok(())
}

fn simulate_pair(
    model: &LevySystemModel,
    nominal: &LevySystemModel,
    init_law: &InitLaw,
    cfg: &IntegratorConfig,
    schedule: &JumpSchedule,
    stream: RandomStream,
) -> Result<PathPair> {
    let (x0, y0) = init_law.draw(stream);
    let perturbed = integrate_scheduled(model, &x0, cfg, stream, schedule)?;
    let nominal = integrate_nominal_on_grid(nominal, &y0, &perturbed.times, cfg.scheme, cfg.blowup)?;
    Ok(PathPair { perturbed, nominal })
}

fn schedule_for(mode: &EnsembleMode) -> JumpSchedule {
    match mode {
        EnsembleMode::Unconditional => JumpSchedule::Poisson,
        EnsembleMode::Conditional(k) => JumpSchedule::Conditional(*k),
    }
}

/// `count` (perturbed, nominal) pairs; pair `i` uses stream `(seed, i)`.
///
/// The nominal path is integrated with RK4 on the perturbed path's grid so
/// both are compared at identical times.
pub fn run_ensemble(
    model: &LevySystemModel,
    init_law: &InitLaw,
    cfg: &IntegratorConfig,
    count: usize,
    mode: EnsembleMode,
    seed: u64,
) -> Result<PairedEnsemble> {
    check_ensemble_args(model, init_law, cfg, count)?;
    let schedule = schedule_for(&mode);
    let nominal = model.nominal();
    let pairs = (0..count as u64)
        .into_par_iter()
        .map(|i| simulate_pair(model, &nominal, init_law, cfg, &schedule, RandomStream::new(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedEnsemble {
        model_name: model.name.clone(),
        pairs,
        init_law: init_law.clone(),
        mode,
        horizon: cfg.horizon,
        seed,
    })
}

/// What [`sample_pair_errors`] keeps of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    /// Jumps in the integration horizon.
    pub jump_count: usize,
    /// `‖y(s) - x(s)‖`
    pub initial_gap: f64,
    /// `‖y(t) - x(t)‖²` at each evaluation time.
    pub squared_errors: Vec<f64>,
}

/// Same pairs as [`run_ensemble`] with the same seed, reduced to squared
/// errors at `eval_times` so large ensembles need not be held in memory.
pub fn sample_pair_errors(
    model: &LevySystemModel,
    init_law: &InitLaw,
    cfg: &IntegratorConfig,
    count: usize,
    mode: EnsembleMode,
    seed: u64,
    eval_times: &[f64],
) -> Result<Vec<PairSample>> {
    check_ensemble_args(model, init_law, cfg, count)?;
    let schedule = schedule_for(&mode);
    let nominal = model.nominal();
    let (s, t) = cfg.horizon;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let pair = simulate_pair(model, &nominal, init_law, cfg, &schedule, RandomStream::new(seed, i))?;
            Ok(PairSample {
                jump_count: pair.perturbed.jump_count(s, t),
                initial_gap: pair.squared_error_at(s).sqrt(),
                squared_errors: eval_times.iter().map(|&te| pair.squared_error_at(te)).collect(),
            })
        })
        .collect()
}

/// Path dump: `path_id,time,x_1..x_n,y_1..y_n,is_jump,experiment,seed,version`.
pub fn write_paths_csv<W: Write>(
    mut out: W,
    ensemble: &PairedEnsemble,
    max_paths: usize,
    provenance: &Provenance,
) -> io::Result<()> {
    let dim = ensemble.pairs.first().map_or(0, |p| p.perturbed.states[0].len());
    let mut header = vec!["path_id".to_string(), "time".to_string()];
    header.extend((1..=dim).map(|i| format!("x_{i}")));
    header.extend((1..=dim).map(|i| format!("y_{i}")));
    header.push("is_jump".into());
    header.extend(Provenance::columns().iter().map(|c| c.to_string()));
    writeln!(out, "{}", header.join(","))?;
    for (id, pair) in ensemble.pairs.iter().take(max_paths).enumerate() {
        let x = &pair.perturbed;
        for i in 0..x.len() {
            let mut row = vec![id.to_string(), x.times[i].to_string()];
            row.extend(x.states[i].iter().map(|v| v.to_string()));
            row.extend(pair.nominal.states[i].iter().map(|v| v.to_string()));
            row.push(u8::from(x.is_jump(i)).to_string());
            row.extend(provenance.values());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
