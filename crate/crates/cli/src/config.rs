//! Flat `key = value` configuration files.

use levy_contract::experiment::{parse_time_law, ExperimentConfig, ExperimentName, StrategyName};
use toml::{Table, Value};

pub const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "n_paths",
    "k_max",
    "t_start",
    "t_end",
    "dt",
    "eval_points",
    "lambda",
    "eta",
    "gamma",
    "alpha",
    "bound_eta_scale",
    "rate",
    "reference_amplitude",
    "reference_frequency",
    "condition_number",
    "strategy",
    "time_law",
    "mc_samples",
    "initial_offset",
    "init_std",
    "paths_dump",
    "a_matrix",
    "domain_radius",
    "certify_points",
];

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_count(v: &Value) -> Option<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        _ => None,
    }
}

/// Parses `text` on top of the preset it names (or `fallback` when the file
/// has no `experiment` key). Every problem is reported, not just the first.
pub fn parse(text: &str, fallback: Option<ExperimentName>) -> Result<ExperimentConfig, Vec<String>> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| vec![format!("syntax: {}", e.message())])?;
    let mut errs = Vec::new();

    // an unusable name still lets the remaining keys be checked
    let experiment = match table.get("experiment") {
        Some(Value::String(name)) => ExperimentName::parse(name).unwrap_or_else(|| {
            errs.push(format!("experiment: unknown name `{name}`; allowed: {}", ExperimentName::allowed()));
            ExperimentName::Nonlinear2d
        }),
        Some(_) => {
            errs.push("experiment: expected a string".into());
            ExperimentName::Nonlinear2d
        }
        None => fallback.ok_or_else(|| vec![format!("experiment: missing; allowed: {}", ExperimentName::allowed())])?,
    };
    let mut cfg = ExperimentConfig::preset(experiment);

    for (key, v) in &table {
        let bad = |kind: &str| format!("{key}: expected {kind}, got {v}");
        macro_rules! float {
            ($field:expr) => {
                match as_f64(v) {
                    Some(x) => $field = x,
                    None => errs.push(bad("a number")),
                }
            };
        }
        macro_rules! count {
            ($field:expr) => {
                match as_count(v) {
                    Some(x) => $field = x as usize,
                    None => errs.push(bad("a nonnegative integer")),
                }
            };
        }
        match key.as_str() {
            "experiment" => {}
            "seed" => match as_count(v) {
                Some(x) => cfg.seed = x,
                None => errs.push(bad("a nonnegative integer")),
            },
            "n_paths" => count!(cfg.n_paths),
            "k_max" => count!(cfg.k_max),
            "t_start" => float!(cfg.t_start),
            "t_end" => float!(cfg.t_end),
            "dt" => float!(cfg.dt),
            "eval_points" => count!(cfg.eval_points),
            "lambda" => float!(cfg.lambda),
            "eta" => float!(cfg.eta),
            "gamma" => float!(cfg.gamma),
            "alpha" => match as_f64(v) {
                Some(x) => cfg.alpha = Some(x),
                None => errs.push(bad("a number")),
            },
            "bound_eta_scale" => float!(cfg.bound_eta_scale),
            "rate" => float!(cfg.rate),
            "reference_amplitude" => float!(cfg.reference_amplitude),
            "reference_frequency" => float!(cfg.reference_frequency),
            "condition_number" => float!(cfg.condition_number),
            "strategy" => match v.as_str().map(|s| (s, StrategyName::parse(s))) {
                Some((_, Some(s))) => cfg.strategy = s,
                Some((s, None)) => errs.push(format!(
                    "strategy: unknown `{s}`; allowed: {}",
                    StrategyName::allowed()
                )),
                None => errs.push(bad("a string")),
            },
            "time_law" => match v.as_str().map(|s| (s, parse_time_law(s))) {
                Some((_, Some(l))) => cfg.time_law = l,
                Some((s, None)) => errs.push(format!("time_law: unknown `{s}`; allowed: gamma, uniform")),
                None => errs.push(bad("a string")),
            },
            "mc_samples" => count!(cfg.mc_samples),
            "initial_offset" => float!(cfg.initial_offset),
            "init_std" => float!(cfg.init_std),
            "paths_dump" => count!(cfg.paths_dump),
            "a_matrix" => match v.as_array().map(|a| a.iter().map(as_f64).collect::<Option<Vec<_>>>()) {
                Some(Some(a)) => cfg.a_matrix = Some(a),
                _ => errs.push(bad("an array of numbers")),
            },
            "domain_radius" => float!(cfg.domain_radius),
            "certify_points" => count!(cfg.certify_points),
            _ => errs.push(format!("{key}: unknown key; allowed: {}", KEYS.join(", "))),
        }
    }
    if let Err(mut more) = cfg.validate() {
        // type errors above already explain these
        more.retain(|m| !errs.iter().any(|e| e.split(':').next() == m.split(':').next()));
        errs.extend(more);
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}
