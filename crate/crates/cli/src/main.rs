//! `levy-contract`: certify, bound, simulate and audit a preset system.
//!
//! Exit status: 0 when certification and audit pass, 1 on a failed
//! certificate or a hard bound violation, 2 on configuration errors, 3 when
//! the run itself errors out.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use levy_contract::experiment::{
    parse_time_law, run_experiment, sweep, write_sweep_csv, ExperimentConfig, ExperimentName, StrategyName, SweepParam,
};
use levy_contract::provenance::Provenance;

#[derive(Parser, Debug)]
#[command(name = "levy-contract", version, about = "Contraction-bound experiments under white, shot and Lévy noise")]
struct Args {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name (used when the config has no `experiment` key)
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// PARAM=v1,v2,... with PARAM one of lambda, eta, alpha, condition_number
    #[arg(long)]
    sweep: Option<String>,
    /// quadrature, mc or loose_{first_term,max_nng,sum_exp}
    #[arg(long)]
    strategy: Option<String>,
    /// Paths per jump-count stratum
    #[arg(long)]
    paths: Option<usize>,
    /// gamma or uniform
    #[arg(long)]
    time_law: Option<String>,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, Vec<String>> {
    let mut errs = Vec::new();
    let flag_experiment = args.experiment.as_deref().and_then(|n| {
        let e = ExperimentName::parse(n);
        if e.is_none() {
            errs.push(format!("--experiment: unknown name `{n}`; allowed: {}", ExperimentName::allowed()));
        }
        e
    });
    let strategy = args.strategy.as_deref().and_then(|s| {
        let parsed = StrategyName::parse(s);
        if parsed.is_none() {
            errs.push(format!("--strategy: unknown `{s}`; allowed: {}", StrategyName::allowed()));
        }
        parsed
    });
    let time_law = args.time_law.as_deref().and_then(|l| {
        let parsed = parse_time_law(l);
        if parsed.is_none() {
            errs.push(format!("--time-law: unknown `{l}`; allowed: gamma, uniform"));
        }
        parsed
    });
    let parsed = match (&args.config, flag_experiment) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| vec![format!("--config {}: {e}", path.display())])
            .and_then(|text| config::parse(&text, flag_experiment)),
        (None, Some(e)) => Ok(ExperimentConfig::preset(e)),
        (None, None) if args.experiment.is_some() => Err(vec![]),
        (None, None) => Err(vec![format!(
            "need --config or --experiment; experiments: {}",
            ExperimentName::allowed()
        )]),
    };
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(more) => {
            errs.extend(more);
            return Err(errs);
        }
    };
    if let Some(e) = flag_experiment.filter(|e| *e != cfg.experiment) {
        errs.push(format!("--experiment {e} conflicts with `experiment = \"{}\"` in the config", cfg.experiment));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.paths {
        cfg.n_paths = n;
    }
    if let Some(s) = strategy {
        cfg.strategy = s;
    }
    if let Some(l) = time_law {
        cfg.time_law = l;
    }
    if let Err(more) = cfg.validate() {
        errs.extend(more);
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>), String> {
    let (name, list) = spec.split_once('=').ok_or("--sweep: expected PARAM=v1,v2,...")?;
    let param = SweepParam::parse(name.trim())
        .ok_or_else(|| format!("--sweep: unknown parameter `{name}`; allowed: lambda, eta, alpha, condition_number"))?;
    let values = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("--sweep: `{v}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((param, values))
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("LEVY_CONTRACT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("LEVY_CONTRACT_THREADS: expected a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("LEVY_CONTRACT_THREADS: {e}"))
}

fn config_error(errs: &[String]) -> ExitCode {
    eprintln!("configuration errors:");
    for e in errs {
        eprintln!("  {e}");
    }
    ExitCode::from(2)
}

fn write_replay_config(args: &Args, cfg: &ExperimentConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_flat_text())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = configure_threads() {
        return config_error(&[e]);
    }
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(errs) => return config_error(&errs),
    };
    let swept = match args.sweep.as_deref().map(parse_sweep).transpose() {
        Ok(s) => s,
        Err(e) => return config_error(&[e]),
    };
    if let Some((param, _)) = swept.as_ref().filter(|(p, _)| !p.applies_to(cfg.experiment)) {
        return config_error(&[format!(
            "--sweep: {} does not apply to `{}`",
            param.as_str(),
            cfg.experiment
        )]);
    }
    if let Err(e) = write_replay_config(&args, &cfg) {
        eprintln!("error: {}: {e}", args.out.display());
        return ExitCode::from(3);
    }

    match swept {
        Some((param, values)) => {
            let rows = match sweep(&cfg, param, &values) {
                Ok(rows) => rows,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(3);
                }
            };
            let path = args.out.join("sweep.csv");
            let written = File::create(&path).and_then(|f| {
                let mut w = BufWriter::new(f);
                write_sweep_csv(&mut w, &rows, &Provenance::new(cfg.experiment.as_str(), cfg.seed))?;
                w.flush()
            });
            if let Err(e) = written {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(3);
            }
            for r in &rows {
                println!(
                    "{}={}: rhs={:.6} kappa={:.6} hard_violations={} {}",
                    param.as_str(),
                    r.value,
                    r.rhs,
                    r.kappa,
                    r.hard_violations,
                    if r.passed { "pass" } else { "FAIL" }
                );
            }
            if rows.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        None => {
            let outcome = match run_experiment(&cfg) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(3);
                }
            };
            if let Err(e) = outcome.write_artifacts(&args.out) {
                eprintln!("error: {}: {e}", args.out.display());
                return ExitCode::from(3);
            }
            print!("{}", outcome.audit.summary_text());
            println!(
                "certified: {}\nartifacts: {}\nstatus: {}",
                outcome.certified,
                args.out.display(),
                if outcome.passed() { "pass" } else { "FAIL" }
            );
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
