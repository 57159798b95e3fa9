//! Jump-count-conditioned Monte Carlo estimates of the mean-squared error
//! between perturbed and nominal trajectories, and audits of bounds against
//! them.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::Rng;

use crate::bounds::{BoundKind, BoundParams};
use crate::contraction::ContractionCertificate;
use crate::error::{invalid, Error, Result};
use crate::noise::{Channel, RandomStream};
use crate::provenance::Provenance;
use crate::simulate::{
    integrate_nominal_on_grid, sample_pair_errors, Scheme, EnsembleMode, InitLaw, IntegratorConfig, PairedEnsemble,
};
use crate::systems::LevySystemModel;

pub const DEFAULT_FLOOR: usize = 200;
/// Below this sample size the CI comes from a percentile bootstrap.
pub const BOOTSTRAP_THRESHOLD: usize = 1000;
const BOOTSTRAP_RESAMPLES: usize = 1000;
const Z95: f64 = 1.959_963_984_540_054;
/// Exceedance, in standard errors, that makes a bound violation hard.
pub const HARD_VIOLATION_SE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    Normal,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMseEstimate {
    pub k: usize,
    pub t: f64,
    pub n_paths: usize,
    pub mse: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
    pub low_confidence: bool,
    pub bound_rhs: Option<f64>,
    /// `bound_rhs - ci_high`
    pub margin: Option<f64>,
}

impl ConditionalMseEstimate {
    pub fn attach_bound(&mut self, rhs: f64) {
        self.bound_rhs = Some(rhs);
        self.margin = Some(rhs - self.ci_high);
    }

    /// `mse > bound + 3·SE`.
    pub fn is_hard_violation(&self) -> bool {
        self.bound_rhs
            .is_some_and(|b| self.mse > b + HARD_VIOLATION_SE * self.std_err)
    }

    pub fn is_violation(&self) -> bool {
        self.margin.is_some_and(|m| m < 0.0)
    }
}

/// Mean, standard error and 95% CI of `samples`.
///
/// Normal approximation from [`BOOTSTRAP_THRESHOLD`] samples upward,
/// percentile bootstrap on `stream` below it.
pub fn mean_with_ci(samples: &[f64], stream: RandomStream) -> (f64, f64, f64, f64, CiMethod) {
    let n = samples.len();
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = if n > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    let se = (var / nf).sqrt();
    if n >= BOOTSTRAP_THRESHOLD {
        return (mean, se, mean - Z95 * se, mean + Z95 * se, CiMethod::Normal);
    }
    let mut rng = stream.channel(Channel::Auxiliary);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / nf)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = means[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
    let hi = means[(0.975 * BOOTSTRAP_RESAMPLES as f64) as usize - 1];
    (mean, se, lo.min(mean), hi.max(mean), CiMethod::Bootstrap)
}

fn bootstrap_stream(seed: u64, k: usize, index: usize) -> RandomStream {
    RandomStream::new(seed, (1 << 63) | ((k as u64) << 32) | index as u64)
}

fn estimate_from(samples: &[f64], k: usize, t: f64, floor: usize, stream: RandomStream) -> ConditionalMseEstimate {
    let (mse, std_err, ci_low, ci_high, ci_method) = mean_with_ci(samples, stream);
    ConditionalMseEstimate {
        k,
        t,
        n_paths: samples.len(),
        mse,
        std_err,
        ci_low,
        ci_high,
        ci_method,
        low_confidence: samples.len() < floor,
        bound_rhs: None,
        margin: None,
    }
}

/// `E_k‖y(t) - x(t)‖²` at each of `eval_times`, over the pairs with exactly
/// `k` jumps in the ensemble horizon.
pub fn estimate_conditional_mse(
    ensemble: &PairedEnsemble,
    k: usize,
    eval_times: &[f64],
    floor: usize,
) -> Result<Vec<ConditionalMseEstimate>> {
    let (s, t) = ensemble.horizon;
    let stratum: Vec<_> = ensemble
        .pairs
        .iter()
        .filter(|p| p.perturbed.jump_count(s, t) == k)
        .collect();
    if stratum.is_empty() {
        return Err(Error::InsufficientStratum { k });
    }
    Ok(eval_times
        .iter()
        .enumerate()
        .map(|(i, &te)| {
            let samples: Vec<f64> = stratum.iter().map(|p| p.squared_error_at(te)).collect();
            estimate_from(&samples, k, te, floor, bootstrap_stream(ensemble.seed, k, i))
        })
        .collect())
}

/// Seed of the conditional ensemble for stratum `k`.
pub fn stratum_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub experiment: String,
    pub k_range: Vec<usize>,
    pub time_grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub init: InitLaw,
    pub integrator: IntegratorConfig,
    pub floor: usize,
}

/// Empirical moments of `y(s) - x(s)` fed to the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialMoments {
    /// `E‖y(s) - x(s)‖²`
    pub e0_sq: f64,
    /// `E‖y(s) - x(s)‖`
    pub d0: f64,
}

impl InitialMoments {
    /// From the same initial draws the audit of stratum `k` uses.
    pub fn estimate(init: &InitLaw, seed: u64, k: usize, n: usize) -> Self {
        let seed = stratum_seed(seed, k);
        let n = n.max(1);
        let gaps: Vec<f64> = (0..n as u64)
            .map(|i| {
                let (x0, y0) = init.draw(RandomStream::new(seed, i));
                (y0 - x0).norm()
            })
            .collect();
        Self {
            e0_sq: gaps.iter().map(|g| g * g).sum::<f64>() / n as f64,
            d0: gaps.iter().sum::<f64>() / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub model: String,
    pub kind: BoundKind,
    pub strategy: String,
    pub cells: Vec<ConditionalMseEstimate>,
    /// Indices of cells with negative margin.
    pub violations: Vec<usize>,
    /// Indices of cells exceeding the bound by more than 3 standard errors.
    pub hard_violations: Vec<usize>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.hard_violations.is_empty()
    }

    /// `k,t,n,mse,ci_low,ci_high,bound_rhs,margin,std_err,hard_violation,low_confidence,kind,strategy,experiment,seed,version`
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> io::Result<()> {
        if header {
            let mut cols = vec![
                "k",
                "t",
                "n",
                "mse",
                "ci_low",
                "ci_high",
                "bound_rhs",
                "margin",
                "std_err",
                "hard_violation",
                "low_confidence",
                "kind",
                "strategy",
            ];
            cols.extend(Provenance::columns());
            writeln!(out, "{}", cols.join(","))?;
        }
        let prov = self.provenance.values().join(",");
        for c in &self.cells {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.k,
                c.t,
                c.n_paths,
                c.mse,
                c.ci_low,
                c.ci_high,
                opt(c.bound_rhs),
                opt(c.margin),
                c.std_err,
                u8::from(c.is_hard_violation()),
                u8::from(c.low_confidence),
                self.kind,
                self.strategy,
                prov
            )?;
        }
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let worst = self
            .cells
            .iter()
            .filter_map(|c| c.margin.map(|m| (m, c)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let mut s = format!(
            "audit model={} kind={} strategy={} experiment={} seed={}\n  cells={} soft_violations={} hard_violations={} status={}\n",
            self.model,
            self.kind,
            self.strategy,
            self.provenance.experiment,
            self.provenance.seed,
            self.cells.len(),
            self.violations.len(),
            self.hard_violations.len(),
            if self.passed() { "pass" } else { "FAIL" }
        );
        if let Some((m, c)) = worst {
            s += &format!(
                "  worst margin={m:.6e} at k={} t={} (mse={:.6e} se={:.3e} bound={:.6e})\n",
                c.k,
                c.t,
                c.mse,
                c.std_err,
                c.bound_rhs.unwrap_or(f64::NAN)
            );
        }
        for w in &self.warnings {
            s += &format!("  warning: {w}\n");
        }
        s
    }
}

/// Compares the conditional MSE of `model` against `bound_for(k, moments)`
/// on every `(k, t)` of the config.
///
/// The bound at `t` conditions on `k` jumps in `[s, t]`, so each cell with
/// `k > 0` is simulated on its own horizon `[s, t]`. All cells of one `k`
/// share the streams of [`stratum_seed`], which keeps initial conditions and
/// uniform jump-time draws common across `t`.
pub fn audit_bound<F>(model: &LevySystemModel, bound_for: F, cfg: &AuditConfig) -> Result<AuditReport>
where
    F: Fn(usize, &InitialMoments) -> Result<BoundParams>,
{
    if cfg.k_range.is_empty() || cfg.time_grid.is_empty() {
        return Err(invalid("audit", "k_range and time_grid must be non-empty"));
    }
    let (s, end) = cfg.integrator.horizon;
    if let Some(&bad) = cfg.time_grid.iter().find(|&&t| !(t > s && t <= end)) {
        return Err(invalid("time_grid", format!("time {bad} outside ({s}, {end}]")));
    }
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    let mut kind = None;
    let mut strategy = String::new();
    for &k in &cfg.k_range {
        if k > 0 && !model.has_jumps() {
            return Err(invalid("k_range", format!("model `{}` has no jumps but k = {k} requested", model.name)));
        }
        let seed = stratum_seed(cfg.seed, k);
        let moments = InitialMoments::estimate(&cfg.init, cfg.seed, k, cfg.n_paths);
        let bound = bound_for(k, &moments)?;
        if !bound.kind.matches(model.kind()) {
            return Err(Error::KindMismatch {
                bound: bound.kind.to_string(),
                model: model.kind().to_string(),
            });
        }
        kind = Some(bound.kind);
        strategy = bound.strategy.clone();
        warnings.extend(bound.warnings.iter().map(|w| format!("k={k}: {w}")));

        let columns: Vec<Vec<f64>> = if k == 0 {
            // without jumps in [s, t] the path up to t does not depend on later jumps
            let mode = if model.has_jumps() {
                EnsembleMode::Conditional(0)
            } else {
                EnsembleMode::Unconditional
            };
            let samples = sample_pair_errors(model, &cfg.init, &cfg.integrator, cfg.n_paths, mode, seed, &cfg.time_grid)?;
            (0..cfg.time_grid.len())
                .map(|i| samples.iter().map(|p| p.squared_errors[i]).collect())
                .collect()
        } else {
            cfg.time_grid
                .iter()
                .map(|&t| {
                    let integrator = IntegratorConfig {
                        horizon: (s, t),
                        dt: cfg.integrator.dt.min(t - s),
                        ..cfg.integrator
                    };
                    let samples = sample_pair_errors(
                        model,
                        &cfg.init,
                        &integrator,
                        cfg.n_paths,
                        EnsembleMode::Conditional(k),
                        seed,
                        &[t],
                    )?;
                    Ok(samples.iter().map(|p| p.squared_errors[0]).collect())
                })
                .collect::<Result<_>>()?
        };
        for (i, (&t, column)) in cfg.time_grid.iter().zip(&columns).enumerate() {
            let mut cell = estimate_from(column, k, t, cfg.floor, bootstrap_stream(seed, k, i));
            cell.attach_bound(bound.rhs(moments.e0_sq, s, t)?);
            cells.push(cell);
        }
    }
    let violations = (0..cells.len()).filter(|&i| cells[i].is_violation()).collect();
    let hard_violations = (0..cells.len()).filter(|&i| cells[i].is_hard_violation()).collect();
    Ok(AuditReport {
        model: model.name.clone(),
        kind: kind.expect("k_range non-empty"),
        strategy,
        cells,
        violations,
        hard_violations,
        warnings,
        provenance: Provenance::new(cfg.experiment.clone(), cfg.seed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub passed: bool,
    /// Largest `‖x₂(t) - x₁(t)‖ / envelope(t)` seen.
    pub worst_ratio: f64,
    pub worst_time: f64,
    pub worst_pair: usize,
    pub samples: usize,
}

/// Checks `‖x₂(t) - x₁(t)‖ <= √(m̄/m̲)·‖x₂(s) - x₁(s)‖·e^{-α(t-s)}·(1 + tol)`
/// on nominal trajectories integrated with RK4 at step `dt`.
pub fn check_incremental_decay(
    model: &LevySystemModel,
    cert: &ContractionCertificate,
    pairs: &[(DVector<f64>, DVector<f64>)],
    horizon: (f64, f64),
    dt: f64,
    tol: f64,
) -> Result<DecayReport> {
    let cfg = IntegratorConfig::new(dt, horizon);
    cfg.validate()?;
    let grid = cfg.uniform_grid();
    let nominal = model.nominal();
    let scale = (cert.m_upper / cert.m_lower).sqrt();
    let mut report = DecayReport {
        passed: true,
        worst_ratio: 0.0,
        worst_time: horizon.0,
        worst_pair: 0,
        samples: 0,
    };
    for (idx, (a, b)) in pairs.iter().enumerate() {
        let pa = integrate_nominal_on_grid(&nominal, a, &grid, Scheme::Rk4Drift, cfg.blowup)?;
        let pb = integrate_nominal_on_grid(&nominal, b, &grid, Scheme::Rk4Drift, cfg.blowup)?;
        let gap0 = (b - a).norm();
        for (i, &t) in grid.iter().enumerate() {
            let gap = (&pb.states[i] - &pa.states[i]).norm();
            let envelope = scale * gap0 * (-cert.alpha * (t - horizon.0)).exp();
            let ratio = if envelope > 0.0 {
                gap / envelope
            } else if gap > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            report.samples += 1;
            if ratio > report.worst_ratio {
                report.worst_ratio = ratio;
                report.worst_time = t;
                report.worst_pair = idx;
            }
        }
    }
    report.passed = report.worst_ratio <= 1.0 + tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::bounds::{shot_bound, white_bound, HFunction};
    use crate::contraction::SamplingBox;
    use crate::noise::MarkLaw;
    use crate::simulate::run_ensemble;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn shot(a: f64, eta: f64) -> LevySystemModel {
        LevySystemModel::new("shot", 1, Arc::new(move |_, x| -x * a), 1.0)
            .unwrap()
            .with_jumps(eta, Arc::new(move |_, _| MarkLaw::Constant(DVector::from_element(1, eta))))
            .unwrap()
    }

    fn unit_cert(alpha: f64) -> ContractionCertificate {
        ContractionCertificate::constant(DMatrix::identity(1, 1), alpha, SamplingBox::cube((0.0, 1.0), 1, 1.0).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_jumps_give_zero_error() {
        let cfg = IntegratorConfig::new(0.01, (0.0, 1.0));
        let ens = run_ensemble(&shot(1.0, 1.0), &InitLaw::Matched(v(0.4)), &cfg, 50, EnsembleMode::Conditional(0), 1)
            .unwrap();
        for e in estimate_conditional_mse(&ens, 0, &[0.0, 0.5, 1.0], DEFAULT_FLOOR).unwrap() {
            assert!(e.mse.abs() < 1e-20);
            assert!(e.low_confidence);
            assert_eq!(e.ci_method, CiMethod::Bootstrap);
        }
    }

    #[test]
    fn single_jump_oracle() {
        let cfg = IntegratorConfig::new(0.01, (0.0, 1.0));
        let ens = run_ensemble(&shot(1.0, 1.0), &InitLaw::Matched(v(0.0)), &cfg, 4000, EnsembleMode::Conditional(1), 2)
            .unwrap();
        let e = &estimate_conditional_mse(&ens, 1, &[1.0], DEFAULT_FLOOR).unwrap()[0];
        let oracle = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((e.mse - oracle).abs() < 3.0 * e.std_err, "{} vs {oracle}", e.mse);
        assert!(e.ci_low <= e.mse && e.mse <= e.ci_high);
        assert_eq!(e.ci_method, CiMethod::Normal);
    }

    #[test]
    fn empty_stratum_is_an_error() {
        let cfg = IntegratorConfig::new(0.1, (0.0, 1.0));
        let ens = run_ensemble(&shot(1.0, 1.0), &InitLaw::Matched(v(0.0)), &cfg, 5, EnsembleMode::Conditional(2), 3)
            .unwrap();
        assert_eq!(
            estimate_conditional_mse(&ens, 1, &[1.0], DEFAULT_FLOOR),
            Err(Error::InsufficientStratum { k: 1 })
        );
    }

    #[test]
    fn kind_mismatch_rejected() {
        let cfg = AuditConfig {
            experiment: "t".into(),
            k_range: vec![0],
            time_grid: vec![1.0],
            n_paths: 10,
            seed: 0,
            init: InitLaw::Matched(v(0.0)),
            integrator: IntegratorConfig::new(0.1, (0.0, 1.0)),
            floor: DEFAULT_FLOOR,
        };
        let r = audit_bound(&shot(1.0, 1.0), |_, _| white_bound(&unit_cert(1.0), 1.0, 0.0, 1.0), &cfg);
        assert!(matches!(r, Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn shot_audit_with_dominating_h_passes() {
        let cfg = AuditConfig {
            experiment: "t".into(),
            k_range: (0..=5).collect(),
            time_grid: (1..=4).map(|i| i as f64 * 0.25).collect(),
            n_paths: 300,
            seed: 5,
            init: InitLaw::Matched(v(0.0)),
            integrator: IntegratorConfig::new(0.01, (0.0, 1.0)),
            floor: DEFAULT_FLOOR,
        };
        // h(τ) = h0(1 + 2(τ - s)) makes κ_s = k·h0 with h0 = η² + 2η·4η.
        let h = HFunction::affine(9.0, 18.0, 0.0);
        let report = audit_bound(&shot(1.0, 1.0), |k, _| shot_bound(&unit_cert(1.0), &h, k, 0.0, 1.0), &cfg).unwrap();
        assert!(report.passed(), "{}", report.summary_text());
        assert!(report.violations.is_empty());
        let mut buf = Vec::new();
        report.write_csv(&mut buf, true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 6 * 4);
    }

    #[test]
    fn decay_examples() {
        let m = LevySystemModel::new("d", 1, Arc::new(|_, x| -x), 1.0).unwrap();
        let pairs = vec![(v(0.0), v(1.0))];
        let r = check_incremental_decay(&m, &unit_cert(1.0), &pairs, (0.0, 3.0), 0.01, 1e-6).unwrap();
        assert!(r.passed);
        assert!((r.worst_ratio - 1.0).abs() < 1e-8);
        let r = check_incremental_decay(&m, &unit_cert(2.0), &pairs, (0.0, 3.0), 0.01, 1e-6).unwrap();
        assert!(!r.passed);
    }
}
