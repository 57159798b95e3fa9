//! Named example systems and the certify → bound → simulate → audit
//! pipeline behind the command-line tool.
//!
//! The preset systems are repository-defined examples: a globally
//! contracting 2D nonlinear system, scalar reference tracking, and 2D LTV
//! shot-noise systems with diagonal and upper-triangular `A(t)`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bounds::{
    levy_bound, shot_bound, shot_ltv_bound, white_bound, write_bounds_csv, BoundParams, BoundRow, HFunction,
    PsiSpec, PsiStrategy, RiccatiConstants, TimeLaw,
};
use crate::contraction::{
    check_basic_contraction, check_riccati_tv, fit_transition_envelope, tau_t_grid, CertificationReport,
    ContractionCertificate, EnvelopeStrategy, MetricDerivative, RiccatiReport, SamplingBox, TimeMatrixFn,
    TransitionEnvelope,
};
use crate::error::{invalid, Result};
use crate::noise::{MarkLaw, RandomStream};
use crate::provenance::Provenance;
use crate::simulate::{run_ensemble, write_paths_csv, EnsembleMode, InitLaw, IntegratorConfig, PairedEnsemble};
use crate::systems::{LevySystemModel, LtvSystemModel, ModelKind};
use crate::verify::{audit_bound, check_incremental_decay, AuditConfig, AuditReport, DecayReport, InitialMoments, DEFAULT_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Nonlinear2d,
    Tracking1d,
    Ltv2dDiagonal,
    Ltv2dTriangular,
    Custom,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::Nonlinear2d,
        ExperimentName::Tracking1d,
        ExperimentName::Ltv2dDiagonal,
        ExperimentName::Ltv2dTriangular,
        ExperimentName::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Nonlinear2d => "nonlinear_2d",
            ExperimentName::Tracking1d => "tracking_1d",
            ExperimentName::Ltv2dDiagonal => "ltv_2d_diagonal",
            ExperimentName::Ltv2dTriangular => "ltv_2d_triangular",
            ExperimentName::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }

    pub fn allowed() -> String {
        Self::ALL.map(|e| e.as_str()).join(", ")
    }

    /// Analysed with the LTV bound.
    pub fn is_ltv(self) -> bool {
        matches!(
            self,
            ExperimentName::Ltv2dDiagonal | ExperimentName::Ltv2dTriangular | ExperimentName::Custom
        )
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyName {
    Quadrature,
    Mc,
    LooseFirstTerm,
    LooseMaxNng,
    LooseSumExp,
}

impl StrategyName {
    pub const ALL: [StrategyName; 5] = [
        StrategyName::Quadrature,
        StrategyName::Mc,
        StrategyName::LooseFirstTerm,
        StrategyName::LooseMaxNng,
        StrategyName::LooseSumExp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Quadrature => "quadrature",
            StrategyName::Mc => "mc",
            StrategyName::LooseFirstTerm => "loose_first_term",
            StrategyName::LooseMaxNng => "loose_max_nng",
            StrategyName::LooseSumExp => "loose_sum_exp",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }

    pub fn allowed() -> String {
        Self::ALL.map(|e| e.as_str()).join(", ")
    }

    fn build(self, n: usize, stream: RandomStream) -> PsiStrategy {
        match self {
            StrategyName::Quadrature => PsiStrategy::Quadrature,
            StrategyName::Mc => PsiStrategy::MonteCarlo { n, stream },
            StrategyName::LooseFirstTerm => PsiStrategy::LooseFirstTerm,
            StrategyName::LooseMaxNng => PsiStrategy::LooseMaxNng,
            StrategyName::LooseSumExp => PsiStrategy::LooseSumExp,
        }
    }
}

pub fn parse_time_law(name: &str) -> Option<TimeLaw> {
    match name {
        "gamma" => Some(TimeLaw::GammaUnconditional),
        "uniform" => Some(TimeLaw::UniformOrderStatistics),
        _ => None,
    }
}

/// Every knob of a run. Field names match the configuration keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub n_paths: usize,
    pub k_max: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Audit times `t_start + i·(t_end - t_start)/eval_points`, `i = 1..=eval_points`.
    pub eval_points: usize,
    pub lambda: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Overrides the preset contraction rate.
    pub alpha: Option<f64>,
    /// Ratio of the `η` used by the bound to the simulated `η`.
    pub bound_eta_scale: f64,
    /// Decay rate `a` of `tracking_1d`.
    pub rate: f64,
    pub reference_amplitude: f64,
    pub reference_frequency: f64,
    /// `c` in the LTV metric `P = diag(1, c, …, c)`.
    pub condition_number: f64,
    pub strategy: StrategyName,
    pub time_law: TimeLaw,
    pub mc_samples: usize,
    /// `y0 = x0 + initial_offset·(1, …, 1)` for the fixed start.
    pub initial_offset: f64,
    /// When positive, `x0` and `y0` are drawn independently from
    /// `N(x_init, init_std² I)` instead.
    pub init_std: f64,
    pub paths_dump: usize,
    /// Row-major constant `A` for `custom`.
    pub a_matrix: Option<Vec<f64>>,
    pub domain_radius: f64,
    pub certify_points: usize,
}

impl ExperimentConfig {
    pub fn preset(experiment: ExperimentName) -> Self {
        let base = Self {
            experiment,
            seed: 0,
            n_paths: 1000,
            k_max: 3,
            t_start: 0.0,
            t_end: 2.0,
            dt: 5e-3,
            eval_points: 20,
            lambda: 1.0,
            eta: 0.5,
            gamma: 0.0,
            alpha: None,
            bound_eta_scale: 1.0,
            rate: 1.0,
            reference_amplitude: 1.0,
            reference_frequency: 1.0,
            condition_number: 1.0,
            strategy: StrategyName::Quadrature,
            time_law: TimeLaw::GammaUnconditional,
            mc_samples: 10_000,
            initial_offset: 0.0,
            init_std: 0.0,
            paths_dump: 10,
            a_matrix: None,
            domain_radius: 3.0,
            certify_points: 21,
        };
        match experiment {
            ExperimentName::Nonlinear2d => Self {
                eta: 0.2,
                gamma: 0.1,
                initial_offset: 0.5,
                ..base
            },
            ExperimentName::Tracking1d => Self {
                eta: 0.3,
                gamma: 0.2,
                initial_offset: 0.5,
                ..base
            },
            _ => base,
        }
    }

    /// All problems at once.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        need(self.n_paths >= 2, format!("n_paths: need at least 2, got {}", self.n_paths));
        need(self.k_max <= 50, format!("k_max: at most 50, got {}", self.k_max));
        need(
            self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end,
            format!("t_start/t_end: need t_start < t_end, got [{}, {}]", self.t_start, self.t_end),
        );
        need(
            self.dt > 0.0 && self.dt <= self.t_end - self.t_start,
            format!("dt: need 0 < dt <= t_end - t_start, got {}", self.dt),
        );
        need(self.eval_points >= 1, "eval_points: need at least 1".into());
        need(self.lambda > 0.0 && self.lambda.is_finite(), format!("lambda: must be positive, got {}", self.lambda));
        need(self.eta >= 0.0 && self.eta.is_finite(), format!("eta: must be nonnegative, got {}", self.eta));
        need(self.gamma >= 0.0 && self.gamma.is_finite(), format!("gamma: must be nonnegative, got {}", self.gamma));
        if self.experiment.is_ltv() {
            need(self.gamma == 0.0, format!("gamma: must be 0 for `{}` (shot noise only)", self.experiment));
            need(self.eta > 0.0, format!("eta: must be positive for `{}`", self.experiment));
        }
        if let Some(a) = self.alpha {
            need(a > 0.0 && a.is_finite(), format!("alpha: must be positive, got {a}"));
        }
        need(
            self.bound_eta_scale > 0.0 && self.bound_eta_scale.is_finite(),
            format!("bound_eta_scale: must be positive, got {}", self.bound_eta_scale),
        );
        need(self.rate > 0.0 && self.rate.is_finite(), format!("rate: must be positive, got {}", self.rate));
        need(self.reference_amplitude.is_finite(), "reference_amplitude: must be finite".into());
        need(self.reference_frequency.is_finite(), "reference_frequency: must be finite".into());
        need(
            self.condition_number >= 1.0 && self.condition_number.is_finite(),
            format!("condition_number: must be >= 1, got {}", self.condition_number),
        );
        if self.strategy == StrategyName::Mc {
            need(self.mc_samples >= 1000, format!("mc_samples: need at least 1000, got {}", self.mc_samples));
        }
        need(self.init_std >= 0.0 && self.init_std.is_finite(), format!("init_std: must be nonnegative, got {}", self.init_std));
        need(self.initial_offset.is_finite(), "initial_offset: must be finite".into());
        need(
            self.init_std == 0.0 || self.initial_offset == 0.0,
            "initial_offset: must be 0 when init_std > 0".into(),
        );
        need(self.domain_radius > 0.0, format!("domain_radius: must be positive, got {}", self.domain_radius));
        need(self.certify_points >= 2, format!("certify_points: need at least 2, got {}", self.certify_points));
        match (&self.a_matrix, self.experiment) {
            (None, ExperimentName::Custom) => need(false, "a_matrix: required for experiment `custom`".into()),
            (Some(a), ExperimentName::Custom) => {
                let n = (a.len() as f64).sqrt().round() as usize;
                need(n > 0 && n * n == a.len(), format!("a_matrix: need n*n entries, got {}", a.len()));
                need(a.iter().all(|v| v.is_finite()), "a_matrix: entries must be finite".into());
            }
            (Some(_), e) => need(false, format!("a_matrix: only used by `custom`, not `{e}`")),
            (None, _) => {}
        }
        if self.experiment == ExperimentName::Custom {
            need(self.alpha.is_some(), "alpha: required for experiment `custom`".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// `alpha`, or the preset's own rate when unset (`NaN` for `custom`).
    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.experiment {
            ExperimentName::Nonlinear2d | ExperimentName::Ltv2dDiagonal => 0.5,
            ExperimentName::Tracking1d => self.rate,
            ExperimentName::Ltv2dTriangular => 0.3,
            ExperimentName::Custom => f64::NAN,
        })
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn eval_times(&self) -> Vec<f64> {
        let span = self.t_end - self.t_start;
        (1..=self.eval_points)
            .map(|i| self.t_start + span * i as f64 / self.eval_points as f64)
            .collect()
    }

    fn bound_eta(&self) -> f64 {
        self.eta * self.bound_eta_scale
    }

    /// Flat `key = value` rendering of the config, loadable again.
    pub fn to_flat_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("experiment", format!("\"{}\"", self.experiment));
        kv("seed", self.seed.to_string());
        kv("n_paths", self.n_paths.to_string());
        kv("k_max", self.k_max.to_string());
        kv("t_start", fmt_f64(self.t_start));
        kv("t_end", fmt_f64(self.t_end));
        kv("dt", fmt_f64(self.dt));
        kv("eval_points", self.eval_points.to_string());
        kv("lambda", fmt_f64(self.lambda));
        kv("eta", fmt_f64(self.eta));
        kv("gamma", fmt_f64(self.gamma));
        if let Some(a) = self.alpha {
            kv("alpha", fmt_f64(a));
        }
        kv("bound_eta_scale", fmt_f64(self.bound_eta_scale));
        kv("rate", fmt_f64(self.rate));
        kv("reference_amplitude", fmt_f64(self.reference_amplitude));
        kv("reference_frequency", fmt_f64(self.reference_frequency));
        kv("condition_number", fmt_f64(self.condition_number));
        kv("strategy", format!("\"{}\"", self.strategy.as_str()));
        kv("time_law", format!("\"{}\"", self.time_law));
        kv("mc_samples", self.mc_samples.to_string());
        kv("initial_offset", fmt_f64(self.initial_offset));
        kv("init_std", fmt_f64(self.init_std));
        kv("paths_dump", self.paths_dump.to_string());
        if let Some(a) = &self.a_matrix {
            kv("a_matrix", format!("[{}]", a.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(", ")));
        }
        kv("domain_radius", fmt_f64(self.domain_radius));
        kv("certify_points", self.certify_points.to_string());
        s
    }
}

/// Float literal that always carries a decimal point or exponent.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

enum Analysis {
    Metric {
        cert: ContractionCertificate,
        report: CertificationReport,
        decay: DecayReport,
    },
    Ltv {
        riccati: RiccatiReport,
        envelope: TransitionEnvelope,
        alpha: f64,
    },
}

struct Built {
    model: LevySystemModel,
    init: InitLaw,
    analysis: Analysis,
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn init_law(cfg: &ExperimentConfig, x0: DVector<f64>) -> InitLaw {
    if cfg.init_std > 0.0 {
        InitLaw::GaussianIndependent { mean: x0, std: cfg.init_std }
    } else if cfg.initial_offset != 0.0 {
        let y0 = x0.add_scalar(cfg.initial_offset);
        InitLaw::Fixed { x0, y0 }
    } else {
        InitLaw::Matched(x0)
    }
}

fn metric_system(cfg: &ExperimentConfig, model: LevySystemModel, alpha: f64, x0: DVector<f64>) -> Result<Built> {
    let dim = model.dim;
    let domain = SamplingBox::cube(cfg.horizon(), dim, cfg.domain_radius)?.with_points(cfg.certify_points);
    let cert = ContractionCertificate::constant(DMatrix::identity(dim, dim), alpha, domain.clone())?;
    let report = check_basic_contraction(&model, &cert, &domain, 1e-9, MetricDerivative::Total)?;
    let pairs: Vec<_> = (0..dim)
        .map(|i| {
            let mut y = x0.clone();
            y[i] += 0.5;
            (x0.clone(), y)
        })
        .collect();
    let decay = check_incremental_decay(&model, &cert, &pairs, cfg.horizon(), cfg.dt, 1e-6)?;
    Ok(Built {
        init: init_law(cfg, x0),
        model,
        analysis: Analysis::Metric { cert, report, decay },
    })
}

fn ltv_system(cfg: &ExperimentConfig, ltv: LtvSystemModel, alpha: f64, x0: DVector<f64>) -> Result<Built> {
    let dim = ltv.dim;
    let c = cfg.condition_number;
    let p: TimeMatrixFn = Arc::new(move |_| {
        let mut d = vec![c; dim];
        d[0] = 1.0;
        diag(&d)
    });
    let (s, t) = cfg.horizon();
    ltv.probe_continuity(cfg.horizon(), 64)?;
    let times: Vec<f64> = (0..=200).map(|i| s + (t - s) * i as f64 / 200.0).collect();
    let riccati = check_riccati_tv(&ltv, &p, alpha, &times, 1e-9)?;
    let envelope = fit_transition_envelope(&ltv, &tau_t_grid(cfg.horizon(), 21), &EnvelopeStrategy::Optimize { horizon: None })?;
    Ok(Built {
        model: ltv.to_levy(),
        init: init_law(cfg, x0),
        analysis: Analysis::Ltv {
            riccati,
            envelope,
            alpha,
        },
    })
}

fn build(cfg: &ExperimentConfig) -> Result<Built> {
    let (lambda, eta, gamma) = (cfg.lambda, cfg.eta, cfg.gamma);
    match cfg.experiment {
        ExperimentName::Nonlinear2d => {
            // J + Jᵀ has diagonal <= -2 and off-diagonal 0.5(cos x₂ + cos x₁), so
            // J + Jᵀ <= -I everywhere, with equality at the origin along (1, 1)
            let mut model = LevySystemModel::new(
                "nonlinear_2d",
                2,
                Arc::new(|_, x| {
                    DVector::from_vec(vec![
                        -x[0] - x[0].powi(3) / 3.0 + 0.5 * x[1].sin(),
                        -x[1] + 0.5 * x[0].sin(),
                    ])
                }),
                lambda,
            )?;
            if gamma > 0.0 {
                let g = gamma / 2f64.sqrt();
                model = model.with_diffusion(2, gamma, Arc::new(move |_, x| diag(&[g * x[1].cos(), g * x[0].sin()])))?;
            }
            if eta > 0.0 {
                model = model.with_jumps(eta, Arc::new(move |_, _| MarkLaw::UniformBall { dim: 2, radius: eta }))?;
            }
            metric_system(cfg, model, cfg.effective_alpha(), DVector::from_vec(vec![1.0, -1.0]))
        }
        ExperimentName::Tracking1d => {
            let (a, r0, w) = (cfg.rate, cfg.reference_amplitude, cfg.reference_frequency);
            let mut model = LevySystemModel::new(
                "tracking_1d",
                1,
                Arc::new(move |t, x| DVector::from_element(1, -a * (x[0] - r0 * (w * t).sin()))),
                lambda,
            )?;
            if gamma > 0.0 {
                model = model.with_diffusion(1, gamma, Arc::new(move |_, _| DMatrix::from_element(1, 1, gamma)))?;
            }
            if eta > 0.0 {
                model = model.with_jumps(
                    eta,
                    Arc::new(move |_, _| MarkLaw::TruncatedGaussian {
                        dim: 1,
                        sigma: 0.5 * eta,
                    }),
                )?;
            }
            metric_system(cfg, model, cfg.effective_alpha(), DVector::from_element(1, 0.0))
        }
        ExperimentName::Ltv2dDiagonal => {
            let ltv = LtvSystemModel::new("ltv_2d_diagonal", 2, Arc::new(|t| diag(&[-1.0 - 0.5 * t.sin(), -2.0])), lambda)?
                .with_closed_form(Arc::new(|tau, t| diag(&[-(t - tau) + 0.5 * (t.cos() - tau.cos()), -2.0 * (t - tau)])))
                .with_jumps(eta, Arc::new(move |_| MarkLaw::UniformBall { dim: 2, radius: eta }))?;
            ltv_system(cfg, ltv, cfg.effective_alpha(), DVector::from_vec(vec![1.0, 1.0]))
        }
        ExperimentName::Ltv2dTriangular => {
            let mark = DVector::from_element(2, eta / 2f64.sqrt());
            let ltv = LtvSystemModel::new(
                "ltv_2d_triangular",
                2,
                Arc::new(|t| DMatrix::from_row_slice(2, 2, &[-1.0 - 0.5 * t.sin(), 1.0, 0.0, -2.0])),
                lambda,
            )?
            .with_jumps(eta, Arc::new(move |_| MarkLaw::Constant(mark.clone())))?;
            ltv_system(cfg, ltv, cfg.effective_alpha(), DVector::from_vec(vec![1.0, 1.0]))
        }
        ExperimentName::Custom => {
            let entries = cfg.a_matrix.clone().ok_or_else(|| invalid("a_matrix", "required"))?;
            let n = (entries.len() as f64).sqrt().round() as usize;
            let a = DMatrix::from_row_slice(n, n, &entries);
            let ltv = LtvSystemModel::constant("custom", a, lambda)?
                .with_jumps(eta, Arc::new(move |_| MarkLaw::UniformBall { dim: n, radius: eta }))?;
            let alpha = cfg.alpha.ok_or_else(|| invalid("alpha", "required"))?;
            ltv_system(cfg, ltv, alpha, DVector::from_element(n, 1.0))
        }
    }
}

/// `h(τ) = h0·(1 + β(τ - s))`, for which `κ_s = k·h0` exactly. `h0` bounds
/// the expected jump increment `‖ξ‖² + 2‖ξ‖‖e‖` of the metric-weighted
/// squared error, with `‖e‖` estimated from the initial gap, `k - 1`
/// earlier marks and the stationary white-noise spread.
fn jump_h(cert: &ContractionCertificate, eta: f64, gamma: f64, k: usize, beta: f64, s: f64, e0_sq: f64) -> HFunction {
    let ratio = (cert.m_upper / cert.m_lower).sqrt();
    let spread = ratio * (e0_sq.sqrt() + k.saturating_sub(1) as f64 * eta)
        + gamma * (cert.m_upper / (2.0 * cert.alpha * cert.m_lower)).sqrt();
    let h0 = cert.m_upper * (eta * eta + 2.0 * eta * spread);
    HFunction::affine(h0, h0 * beta, s)
}

fn bound_for(cfg: &ExperimentConfig, built: &Built, k: usize, m: &InitialMoments) -> Result<BoundParams> {
    let (s, t) = cfg.horizon();
    let eta = cfg.bound_eta();
    match &built.analysis {
        Analysis::Metric { cert, .. } => match built.model.kind() {
            ModelKind::White | ModelKind::Nominal => white_bound(cert, cfg.gamma, s, t),
            ModelKind::Shot => {
                let h = jump_h(cert, eta, 0.0, k, 2.0 * cert.alpha, s, m.e0_sq);
                shot_bound(cert, &h, k, s, t)
            }
            ModelKind::Levy => {
                let beta = crate::bounds::white_rate(cert, cfg.gamma)?;
                let h = jump_h(cert, eta, cfg.gamma, k, beta, s, m.e0_sq);
                levy_bound(cert, &h, cfg.gamma, k, s, t)
            }
        },
        Analysis::Ltv {
            riccati,
            envelope,
            alpha,
        } => {
            let spec = PsiSpec {
                alpha2: riccati.alpha2,
                eta,
                kappa: envelope.kappa,
                beta: envelope.beta,
                lambda: cfg.lambda,
                d0: m.d0,
                k,
                window: (s, t),
                time_law: cfg.time_law,
            };
            let strategy = cfg
                .strategy
                .build(cfg.mc_samples, RandomStream::new(cfg.seed, u64::MAX - k as u64));
            let constants = RiccatiConstants {
                alpha: *alpha,
                alpha1: riccati.alpha1,
                alpha2: riccati.alpha2,
            };
            shot_ltv_bound(constants, envelope, &spec, &strategy, eta, s, t)
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub certified: bool,
    /// Structured certificate reports.
    pub certification: Vec<String>,
    pub bound_rows: Vec<BoundRow>,
    pub audit: AuditReport,
    pub sample_paths: PairedEnsemble,
    pub notes: Vec<String>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.certified && self.audit.passed()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.config.experiment.as_str(), self.config.seed)
    }

    pub fn report_text(&self) -> String {
        let mut s = format!(
            "experiment: {}\nseed: {}\nversion: {}\nstatus: {}\n\n",
            self.config.experiment,
            self.config.seed,
            env!("CARGO_PKG_VERSION"),
            if self.passed() { "pass" } else { "FAIL" }
        );
        s += "preset systems are repository-defined examples\n\n[config]\n";
        s += &self.config.to_flat_text();
        s += "\n[certification]\n";
        for c in &self.certification {
            s += c;
            s.push('\n');
        }
        s += &format!("certified: {}\n\n[audit]\n", self.certified);
        s += &self.audit.summary_text();
        for n in &self.notes {
            s += &format!("note: {n}\n");
        }
        s
    }

    /// `paths.csv`, `bounds.csv`, `audit.csv`, `report.txt`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let prov = self.provenance();
        let mut f = BufWriter::new(File::create(dir.join("paths.csv"))?);
        write_paths_csv(&mut f, &self.sample_paths, self.config.paths_dump, &prov)?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(dir.join("bounds.csv"))?);
        write_bounds_csv(&mut f, &self.bound_rows, &prov)?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(dir.join("audit.csv"))?);
        self.audit.write_csv(&mut f, true)?;
        f.flush()?;
        std::fs::write(dir.join("report.txt"), self.report_text())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if let Err(errs) = cfg.validate() {
        return Err(invalid("config", errs.join("; ")));
    }
    let built = build(cfg)?;
    let (certified, certification) = match &built.analysis {
        Analysis::Metric { report, decay, .. } => (
            report.passed && decay.passed,
            vec![
                report.to_text(),
                format!(
                    "{{\n  \"check\": \"incremental_decay\",\n  \"passed\": {},\n  \"worst_ratio\": {},\n  \"worst_time\": {}\n}}",
                    decay.passed, decay.worst_ratio, decay.worst_time
                ),
            ],
        ),
        Analysis::Ltv { riccati, envelope, .. } => (
            riccati.passed,
            vec![
                riccati.to_text(),
                format!(
                    "{{\n  \"check\": \"transition_envelope\",\n  \"kappa\": {},\n  \"beta\": {},\n  \"margin\": {}\n}}",
                    envelope.kappa, envelope.beta, envelope.margin
                ),
            ],
        ),
    };
    let k_range: Vec<usize> = if built.model.has_jumps() {
        (0..=cfg.k_max).collect()
    } else {
        vec![0]
    };
    let integrator = IntegratorConfig::new(cfg.dt, cfg.horizon());
    let audit_cfg = AuditConfig {
        experiment: cfg.experiment.as_str().into(),
        k_range: k_range.clone(),
        time_grid: cfg.eval_times(),
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        init: built.init.clone(),
        integrator,
        floor: DEFAULT_FLOOR,
    };
    let audit = audit_bound(&built.model, |k, m| bound_for(cfg, &built, k, m), &audit_cfg)?;

    // bound table on the audit grid, with the same initial moments the audit used
    let (s, _) = cfg.horizon();
    let mut bound_rows = Vec::new();
    for &k in &k_range {
        let cells: Vec<_> = audit.cells.iter().filter(|c| c.k == k).collect();
        let moments = InitialMoments::estimate(&built.init, cfg.seed, k, cfg.n_paths);
        let bound = bound_for(cfg, &built, k, &moments)?;
        for c in cells {
            bound_rows.push(bound.row(moments.e0_sq, s, c.t)?);
        }
    }

    let dump = cfg.paths_dump.max(1);
    let sample_paths = run_ensemble(&built.model, &built.init, &integrator, dump, EnsembleMode::Unconditional, cfg.seed)?;
    let mut notes = Vec::new();
    if !certified {
        notes.push("certification failed: the audited bound rests on an invalid certificate".into());
    }
    if cfg.bound_eta_scale != 1.0 {
        notes.push(format!("bound uses eta = {} while marks are simulated with eta = {}", cfg.bound_eta(), cfg.eta));
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        certified,
        certification,
        bound_rows,
        audit,
        sample_paths,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Eta,
    Alpha,
    ConditionNumber,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "lambda" => Some(SweepParam::Lambda),
            "eta" => Some(SweepParam::Eta),
            "alpha" => Some(SweepParam::Alpha),
            "condition_number" => Some(SweepParam::ConditionNumber),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Eta => "eta",
            SweepParam::Alpha => "alpha",
            SweepParam::ConditionNumber => "condition_number",
        }
    }

    pub fn applies_to(self, experiment: ExperimentName) -> bool {
        self != SweepParam::ConditionNumber || experiment.is_ltv()
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepParam::Lambda => cfg.lambda = v,
            SweepParam::Eta => cfg.eta = v,
            SweepParam::Alpha => cfg.alpha = Some(v),
            SweepParam::ConditionNumber => cfg.condition_number = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    /// `λ(t_end - t_start)`
    pub expected_jumps: f64,
    pub k: usize,
    pub beta: f64,
    /// Error-ball term at `(t_start, t_end)` for `k = k_max`.
    pub kappa: f64,
    pub rhs: f64,
    pub worst_margin: f64,
    pub soft_violations: usize,
    pub hard_violations: usize,
    pub certified: bool,
    pub passed: bool,
}

/// One full run per value of `param`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if !param.applies_to(cfg.experiment) {
        return Err(invalid(
            "sweep",
            format!("condition_number applies to LTV experiments, not `{}`", cfg.experiment),
        ));
    }
    if values.is_empty() {
        return Err(invalid("sweep", "no values given"));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v);
            let out = run_experiment(&c)?;
            let k = out.bound_rows.iter().map(|r| r.k).max().unwrap_or(0);
            let last = out
                .bound_rows
                .iter()
                .filter(|r| r.k == k)
                .max_by(|a, b| a.t.total_cmp(&b.t))
                .expect("bound rows exist");
            Ok(SweepRow {
                parameter: param,
                value: v,
                expected_jumps: c.lambda * (c.t_end - c.t_start),
                k,
                beta: last.beta,
                kappa: last.kappa,
                rhs: last.rhs_total,
                worst_margin: out
                    .audit
                    .cells
                    .iter()
                    .filter_map(|c| c.margin)
                    .fold(f64::INFINITY, f64::min),
                soft_violations: out.audit.violations.len(),
                hard_violations: out.audit.hard_violations.len(),
                certified: out.certified,
                passed: out.passed(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow], provenance: &Provenance) -> io::Result<()> {
    let mut header = vec![
        "parameter",
        "value",
        "expected_jumps",
        "k",
        "beta",
        "kappa",
        "rhs",
        "worst_margin",
        "soft_violations",
        "hard_violations",
        "certified",
        "passed",
    ];
    header.extend(Provenance::columns());
    writeln!(out, "{}", header.join(","))?;
    let prov = provenance.values().join(",");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.parameter.as_str(),
            r.value,
            r.expected_jumps,
            r.k,
            r.beta,
            r.kappa,
            r.rhs,
            r.worst_margin,
            r.soft_violations,
            r.hard_violations,
            u8::from(r.certified),
            u8::from(r.passed),
            prov
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(name: ExperimentName) -> ExperimentConfig {
        ExperimentConfig {
            n_paths: 200,
            k_max: 2,
            eval_points: 4,
            dt: 1e-2,
            certify_points: 7,
            ..ExperimentConfig::preset(name)
        }
    }

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(ExperimentName::parse(e.as_str()), Some(e));
        }
        assert_eq!(ExperimentName::parse("bogus"), None);
        for s in StrategyName::ALL {
            assert_eq!(StrategyName::parse(s.as_str()), Some(s));
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = ExperimentConfig {
            n_paths: 0,
            lambda: -1.0,
            gamma: 0.3,
            ..ExperimentConfig::preset(ExperimentName::Ltv2dDiagonal)
        };
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        let custom = ExperimentConfig::preset(ExperimentName::Custom).validate().unwrap_err();
        assert!(custom.iter().any(|e| e.starts_with("a_matrix")));
        assert!(custom.iter().any(|e| e.starts_with("alpha")));
    }

    #[test]
    fn presets_certify() {
        for name in [
            ExperimentName::Nonlinear2d,
            ExperimentName::Tracking1d,
            ExperimentName::Ltv2dDiagonal,
            ExperimentName::Ltv2dTriangular,
        ] {
            let built = build(&quick(name)).unwrap();
            let ok = match &built.analysis {
                Analysis::Metric { report, decay, .. } => report.passed && decay.passed,
                Analysis::Ltv { riccati, .. } => riccati.passed,
            };
            assert!(ok, "{name} did not certify");
        }
    }

    #[test]
    fn overstated_alpha_fails_certification() {
        for name in [ExperimentName::Nonlinear2d, ExperimentName::Ltv2dDiagonal] {
            let mut cfg = quick(name);
            // the diagonal LTV preset is 1-contracting on [0, 2] since sin t >= 0 there
            cfg.alpha = Some(1.5);
            let out = run_experiment(&cfg).unwrap();
            assert!(!out.certified);
            assert!(!out.passed());
        }
    }

    #[test]
    fn flat_text_lists_keys() {
        let text = quick(ExperimentName::Custom).to_flat_text();
        assert!(text.contains("experiment = \"custom\""));
        assert!(text.contains("t_end = 2.0"));
    }
}
