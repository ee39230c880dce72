use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use multitreat::balance::{balance_report, BalanceReport};
use multitreat::gps::{fit_multinomial_logit, GpsModel};
use multitreat::inference::CiMethod;
use multitreat::pipeline::{run_pipeline, PipelineOutput};
use multitreat::simulation::{generate, run_monte_carlo, MonteCarloConfig};
use multitreat::trimming::{trim, write_mask_csv, TrimResult};
use multitreat::{Dataset, EffectEstimate};

use crate::args::{Command, Format};
use crate::config::{config_hash, echo, file_sha256, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, OutputDir, Stamp};

/// Loaded input with its fingerprint.
struct Input {
    data: Dataset,
    sha256: String,
}

fn load_input(cfg: &RunConfig) -> Result<Input, CliError> {
    let path = cfg.input_path()?;
    let schema = cfg.csv_schema()?;
    let sha256 = file_sha256(path)?;
    let data = Dataset::load_csv(path, &schema)?;
    log::info!("read {} units, {} levels from {}", data.n(), data.n_levels(), path.display());
    Ok(Input { data, sha256 })
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn open_output(command: &str, cfg: &RunConfig, input_sha256: Option<&str>) -> Result<OutputDir, CliError> {
    let stamp = Stamp { config_hash: config_hash(command, cfg, input_sha256), seed: cfg.pipeline.seed };
    OutputDir::create(&output_dir(cfg), stamp)
}

#[derive(Serialize)]
struct ModelInfo {
    converged: bool,
    iterations: usize,
    log_likelihood: f64,
    gradient_norm: f64,
    covariates: Vec<String>,
    /// `T × K`, reference level last and zero.
    coefficients: Vec<Vec<f64>>,
}

impl From<&GpsModel> for ModelInfo {
    fn from(m: &GpsModel) -> Self {
        Self {
            converged: m.converged(),
            iterations: m.iterations(),
            log_likelihood: m.log_likelihood(),
            gradient_norm: m.gradient_norm(),
            covariates: m.covariate_names().to_vec(),
            coefficients: m.full_coefficients().rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

fn metadata(command: &str, cfg: &RunConfig, input_sha256: Option<&str>) -> serde_json::Map<String, serde_json::Value> {
    let echo = echo(cfg);
    let mut m = serde_json::Map::new();
    m.insert("program".into(), json!("multitreat"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("input_sha256".into(), json!(input_sha256));
    m.insert("config".into(), json!(echo));
    m
}

fn interval_tag(cfg: &RunConfig, method: multitreat::Method) -> &'static str {
    match cfg.pipeline.interval_method(method) {
        CiMethod::BootstrapPercentile => "bootstrap-percentile",
        CiMethod::MatchingVariance => "matched-sample-variance",
    }
}

fn write_estimates_csv<W: std::io::Write>(w: W, rows: &[EffectEstimate], labels: &[String]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "method", "w", "w_prime", "label_w", "label_w_prime", "tau_hat", "se", "ci_lo", "ci_hi", "population", "n_used",
    ])?;
    for e in rows {
        wtr.write_record([
            e.method.tag().to_string(),
            (e.w + 1).to_string(),
            (e.w_prime + 1).to_string(),
            labels[e.w].clone(),
            labels[e.w_prime].clone(),
            num(e.tau_hat),
            opt_num(e.se),
            opt_num(e.ci_lo),
            opt_num(e.ci_hi),
            e.population.tag().to_string(),
            e.n_used.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn one_based(rows: &[EffectEstimate]) -> Vec<EffectEstimate> {
    rows.iter()
        .map(|e| EffectEstimate { w: e.w + 1, w_prime: e.w_prime + 1, ..e.clone() })
        .collect()
}

fn write_trim(out: &mut OutputDir, r: &TrimResult) -> Result<(), CliError> {
    out.json("trim_summary.json", &r.summary())?;
    out.csv("trim_mask.csv", |w| Ok(write_mask_csv(&r.mask, w)?))
}

fn estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let input = load_input(cfg)?;
    let d = &input.data;
    let result: PipelineOutput = run_pipeline(d, &cfg.pipeline)?;
    let mut out = open_output("estimate", cfg, Some(&input.sha256))?;
    let rows = result.estimates();
    let labels = d.level_labels();
    if matches!(cfg.format, Format::Csv | Format::Both) {
        out.csv("estimates.csv", |w| write_estimates_csv(w, &rows, labels))?;
    }
    if matches!(cfg.format, Format::Json | Format::Both) {
        out.json("estimates.json", &json!({ "levels": labels, "estimates": one_based(&rows) }))?;
    }
    if let Some(r) = &result.trim {
        write_trim(&mut out, r)?;
    }

    let methods: Vec<_> = result
        .outcomes
        .iter()
        .map(|o| {
            json!({
                "method": o.method,
                "interval": interval_tag(cfg, o.method),
                "status": if o.result.is_ok() { "ok" } else { "failed" },
                "error": o.result.as_ref().err().map(|f| format!("[{}] {}", f.module, f.message)),
                "bootstrap_discarded": o.bootstrap_discarded,
            })
        })
        .collect();
    let mut meta = metadata("estimate", cfg, Some(&input.sha256));
    meta.insert("n_units".into(), json!(d.n()));
    meta.insert("levels".into(), json!(labels));
    meta.insert("arm_counts".into(), json!(d.arm_counts()));
    meta.insert("model".into(), json!(result.model.as_ref().map(ModelInfo::from)));
    meta.insert("trim".into(), json!(result.trim.as_ref().map(TrimResult::summary)));
    meta.insert("methods".into(), json!(methods));
    out.json("metadata.json", &meta)?;

    match result.first_failure() {
        None => Ok(()),
        Some((method, f)) => {
            for o in &result.outcomes {
                if let Err(f) = &o.result {
                    eprintln!("error: {} failed: [{}] {}", o.method, f.module, f.message);
                }
            }
            let kind = f.kind.unwrap_or(multitreat::ErrorKind::Numerical);
            Err(CliError::from_kind(kind, format!("{method} and possibly other estimators failed; see metadata.json")))
        }
    }
}

fn trim_command(cfg: &RunConfig) -> Result<(), CliError> {
    let input = load_input(cfg)?;
    let d = &input.data;
    let model = fit_multinomial_logit(d, &cfg.pipeline.fit)?;
    let s = model.predict_scores(d)?;
    let r = trim(d, &s, cfg.pipeline.refit_after_trim, &cfg.pipeline.fit)?;
    let mut out = open_output("trim", cfg, Some(&input.sha256))?;
    write_trim(&mut out, &r)?;
    out.csv("trimmed.csv", |w| Ok(r.dataset.write_csv(w, b',')?))?;
    let mut meta = metadata("trim", cfg, Some(&input.sha256));
    meta.insert("model".into(), json!(ModelInfo::from(&model)));
    meta.insert("refit_model".into(), json!(r.model.as_ref().map(ModelInfo::from)));
    meta.insert("trim".into(), json!(r.summary()));
    out.json("metadata.json", &meta)?;
    eprintln!("lambda = {}, dropped {} of {} units", num(r.lambda), r.n_dropped(), d.n());
    Ok(())
}

fn write_balance(out: &mut OutputDir, stem: &str, report: &BalanceReport) -> Result<(), CliError> {
    out.csv(&format!("{stem}.csv"), |w| Ok(report.write_csv(w)?))?;
    out.json(&format!("{stem}.json"), report)
}

fn balance(cfg: &RunConfig) -> Result<(), CliError> {
    let input = load_input(cfg)?;
    let d = &input.data;
    let model = fit_multinomial_logit(d, &cfg.pipeline.fit)?;
    let s = model.predict_scores(d)?;
    let before = balance_report(d, &s, cfg.bins)?;
    let mut out = open_output("balance", cfg, Some(&input.sha256))?;
    write_balance(&mut out, "balance", &before)?;
    let mut meta = metadata("balance", cfg, Some(&input.sha256));
    meta.insert("model".into(), json!(ModelInfo::from(&model)));
    meta.insert("max_abs_gps_nd".into(), json!(before.max_abs_gps_nd()));
    if cfg.pipeline.trim {
        let r = trim(d, &s, cfg.pipeline.refit_after_trim, &cfg.pipeline.fit)?;
        let after = balance_report(&r.dataset, &r.scores, cfg.bins)?;
        write_balance(&mut out, "balance_trimmed", &after)?;
        write_trim(&mut out, &r)?;
        meta.insert("trim".into(), json!(r.summary()));
        meta.insert("max_abs_gps_nd_trimmed".into(), json!(after.max_abs_gps_nd()));
    }
    out.json("metadata.json", &meta)
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let design = cfg.design()?;
    let mc = MonteCarloConfig {
        reps: cfg.simulation.reps,
        seed: cfg.pipeline.seed,
        workers: cfg.workers,
        truth: cfg.simulation.truth,
        pipeline: cfg.pipeline.clone(),
    };
    let start = std::time::Instant::now();
    let run = run_monte_carlo(&design, &mc)?;
    log::info!("{} replicates in {:.1}s", mc.reps, start.elapsed().as_secs_f64());
    let mut out = open_output("simulate", cfg, None)?;
    out.csv("summary_table.csv", |w| Ok(run.summary.write_table_csv(w)?))?;
    out.json("summary.json", &run.summary)?;
    let mut meta = metadata("simulate", cfg, None);
    meta.insert("design".into(), json!(design));
    out.json("metadata.json", &meta)?;
    for m in &run.summary.methods {
        if m.unreliable {
            eprintln!(
                "warning: {} failed in {} of {} replicates (e.g. {})",
                m.method,
                m.failed,
                mc.reps,
                m.example_failure.as_deref().unwrap_or("unknown")
            );
        }
    }
    Ok(())
}

fn generate_command(cfg: &RunConfig) -> Result<(), CliError> {
    let design = cfg.design()?;
    let d = generate(&design, cfg.pipeline.seed)?;
    let mut out = open_output("generate", cfg, None)?;
    out.csv("data.csv", |w| Ok(d.write_csv(w, b',')?))?;
    let mut meta = metadata("generate", cfg, None);
    meta.insert("design".into(), json!(design));
    meta.insert("arm_counts".into(), json!(d.arm_counts()));
    out.json("metadata.json", &meta)
}

pub fn run(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.pipeline.validate()?;
    if cfg.workers > 0 {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    match command {
        Command::Estimate(_) => estimate(cfg),
        Command::Trim(_) => trim_command(cfg),
        Command::Balance(_) => balance(cfg),
        Command::Simulate(_) => simulate(cfg),
        Command::Generate(_) => generate_command(cfg),
    }
}
