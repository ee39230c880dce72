//! Runs a set of estimators with their intervals on one dataset: fit the
//! score model, optionally trim, estimate, attach standard errors.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, ErrorKind, Result};
use crate::estimators::{
    estimate_cov, estimate_dif, estimate_gpsm, estimate_gpss, estimate_pssm, estimate_ppsm_all,
    estimate_weighting, EffectEstimate, EffectSet, Method, Population, WeightingOptions,
};
use crate::gps::{fit_multinomial_logit, FitOptions, GpsModel, ScoreMatrix};
use crate::inference::{bootstrap_ci, matching_variance, BootstrapSettings, CiMethod, CiSpec, Interval};
use crate::trimming::{trim, TrimResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub methods: Vec<Method>,
    pub fit: FitOptions,
    pub weighting: WeightingOptions,
    pub subclasses: usize,
    pub ci_level: f64,
    pub bootstrap_reps: usize,
    pub seed: u64,
    /// Bootstrap GPSM instead of using the matched-sample variance.
    pub gpsm_bootstrap: bool,
    pub trim: bool,
    /// Refit the score model on the trimmed sample.
    pub refit_after_trim: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            fit: FitOptions::default(),
            weighting: WeightingOptions::default(),
            subclasses: 5,
            ci_level: 0.95,
            bootstrap_reps: 1000,
            seed: 0,
            gpsm_bootstrap: false,
            trim: false,
            refit_after_trim: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.subclasses == 0 {
            return Err(Error::Config("at least one subclass is required".into()));
        }
        if self.fit.ridge < 0.0 || !self.fit.ridge.is_finite() {
            return Err(Error::Config(format!("ridge penalty {} must be non-negative", self.fit.ridge)));
        }
        if self.methods.iter().any(|&m| self.interval_method(m) == CiMethod::BootstrapPercentile) {
            self.bootstrap_spec().validate()?;
        } else {
            CiSpec {
                method: CiMethod::MatchingVariance,
                ..self.bootstrap_spec()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Interval construction used for `m`.
    pub fn interval_method(&self, m: Method) -> CiMethod {
        match m {
            Method::Dif | Method::Gpss | Method::Weighting => CiMethod::BootstrapPercentile,
            Method::Gpsm if self.gpsm_bootstrap => CiMethod::BootstrapPercentile,
            _ => CiMethod::MatchingVariance,
        }
    }

    fn bootstrap_spec(&self) -> CiSpec {
        CiSpec {
            method: CiMethod::BootstrapPercentile,
            level: self.ci_level,
            bootstrap_reps: self.bootstrap_reps,
            seed: self.seed,
        }
    }
}

/// A method-level failure, kept as text so outcomes stay cloneable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub module: String,
    pub message: String,
    #[serde(skip)]
    pub kind: Option<ErrorKind>,
}

impl From<&Error> for MethodFailure {
    fn from(e: &Error) -> Self {
        Self {
            module: e.module().to_string(),
            message: e.to_string(),
            kind: Some(e.kind()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub result: std::result::Result<Vec<EffectEstimate>, MethodFailure>,
    /// Discarded bootstrap replicates, when the interval is bootstrapped.
    pub bootstrap_discarded: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Model the scores came from (the refit when trimming with refit).
    pub model: Option<GpsModel>,
    pub scores: Option<ScoreMatrix>,
    pub trim: Option<TrimResult>,
    pub outcomes: Vec<MethodOutcome>,
}

impl PipelineOutput {
    /// Estimates of every successful method, in request order.
    pub fn estimates(&self) -> Vec<EffectEstimate> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .flatten()
            .cloned()
            .collect()
    }

    pub fn first_failure(&self) -> Option<(Method, &MethodFailure)> {
        self.outcomes
            .iter()
            .find_map(|o| o.result.as_ref().err().map(|f| (o.method, f)))
    }
}

fn attach(set: &EffectSet, intervals: &[Interval], population: Population) -> Vec<EffectEstimate> {
    set.estimates()
        .into_iter()
        .zip(intervals)
        .map(|(mut e, iv)| {
            e.se = Some(iv.se);
            e.ci_lo = Some(iv.lo);
            e.ci_hi = Some(iv.hi);
            e.population = population;
            e
        })
        .collect()
}

/// Fits the score model when needed, trims if asked, then runs every
/// requested estimator. Failures of the score fit or of trimming are
/// returned as errors; failures of individual estimators are recorded in
/// their outcomes.
pub fn run_pipeline(d: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let needs_scores = cfg.trim || cfg.methods.iter().any(|m| m.needs_scores());
    let mut model = if needs_scores { Some(fit_multinomial_logit(d, &cfg.fit)?) } else { None };
    let mut scores = match &model {
        Some(m) => Some(m.predict_scores(d)?),
        None => None,
    };

    let mut trimmed = None;
    if cfg.trim {
        let r = trim(d, scores.as_ref().expect("fitted"), cfg.refit_after_trim, &cfg.fit)?;
        if let Some(m) = &r.model {
            model = Some(m.clone());
        }
        scores = Some(r.scores.clone());
        trimmed = Some(r);
    }
    let sample = trimmed.as_ref().map_or(d, |r| &r.dataset);
    let population_override = trimmed.as_ref().map(|_| Population::TrimmedSample);

    let boot_methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|&m| cfg.interval_method(m) == CiMethod::BootstrapPercentile)
        .collect();
    let boot = if boot_methods.is_empty() {
        Vec::new()
    } else {
        let settings = BootstrapSettings {
            fit: cfg.fit,
            weighting: cfg.weighting,
            subclasses: cfg.subclasses,
            warm_start: model.as_ref().map(|m| m.coefficient_slice().to_vec()),
        };
        bootstrap_ci(sample, &boot_methods, &cfg.bootstrap_spec(), &settings)?
    };

    let outcomes = cfg
        .methods
        .iter()
        .map(|&method| {
            let boot_result = boot.iter().find(|b| b.method == method);
            let result = estimate_one(sample, scores.as_ref(), cfg, method, boot_result.cloned(), population_override)
                .map_err(|e| MethodFailure::from(&e));
            MethodOutcome {
                method,
                result,
                bootstrap_discarded: boot_result.map(|b| b.discarded),
            }
        })
        .collect();

    Ok(PipelineOutput {
        model,
        scores,
        trim: trimmed,
        outcomes,
    })
}

fn estimate_one(
    d: &Dataset,
    scores: Option<&ScoreMatrix>,
    cfg: &PipelineConfig,
    method: Method,
    boot: Option<crate::inference::BootstrapResult>,
    population_override: Option<Population>,
) -> Result<Vec<EffectEstimate>> {
    let s = || scores.expect("scores are fitted for score-based methods");
    let level = cfg.ci_level;
    let (set, intervals) = match method {
        Method::Ppsm => {
            let (set, per_pair) = estimate_ppsm_all(d, &cfg.fit)?;
            let intervals = per_pair
                .iter()
                .map(|p| Ok(matching_variance(&p.sample, &p.imputed, level)?[0]))
                .collect::<Result<Vec<_>>>()?;
            (set, intervals)
        }
        Method::Dif | Method::Gpss | Method::Weighting => {
            let set = match method {
                Method::Dif => estimate_dif(d),
                Method::Gpss => estimate_gpss(d, s(), cfg.subclasses)?,
                _ => estimate_weighting(d, s(), &cfg.weighting)?,
            };
            let intervals = boot.expect("bootstrapped").into_result()?;
            (set, intervals)
        }
        Method::Cov | Method::Pssm | Method::Gpsm => {
            let m = match method {
                Method::Cov => estimate_cov(d)?,
                Method::Pssm => estimate_pssm(d, s())?,
                _ => estimate_gpsm(d, s())?,
            };
            let intervals = match boot {
                Some(b) => b.into_result()?,
                None => matching_variance(d, &m.imputed, level)?,
            };
            (m.effects, intervals)
        }
    };
    if intervals.len() != set.pair_effects.len() {
        return Err(Error::InvalidData(format!("{method}: bootstrap produced no usable replicates")));
    }
    let population = population_override.unwrap_or(set.population);
    Ok(attach(&set, &intervals, population))
}
