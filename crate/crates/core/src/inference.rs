//! Standard errors and confidence intervals.
//!
//! * Percentile bootstrap (DIF, GPSS, W): units are resampled with
//!   replacement and the whole pipeline, including the score fit and the
//!   GPSS quantile boundaries, is re-run on every replicate.
//! * Matched-sample variance (COV, PSSM, PPSM, GPSM): for a contrast
//!   `(w, w′)` with imputations `Ŷᵢ(·)` and reuse counts `Kⱼ`,
//!
//!   `V = N⁻² [ Σᵢ (Ŷᵢ(w′) − Ŷᵢ(w) − τ̂)² + Σ_{j: Wⱼ ∈ {w,w′}} (Kⱼ² + Kⱼ) σ̂ⱼ² ]`
//!
//!   with `σ̂ⱼ² = (Yⱼ − Y_{ℓ(j)})² / 2`, `ℓ(j)` the closest other unit of the
//!   same arm on that arm's matching variable. Scores are treated as known;
//!   no adjustment for their estimation is made.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dif, estimate_gpsm, estimate_gpss, estimate_weighting, pairs, EffectSet, ImputedOutcomes, Method,
    WeightingOptions,
};
use crate::gps::{fit_multinomial_logit_from, FitOptions};
use crate::rng::stream_rng;

/// Largest tolerated share of discarded bootstrap replicates.
pub const MAX_DISCARD_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    BootstrapPercentile,
    MatchingVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub method: CiMethod,
    pub level: f64,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for CiSpec {
    fn default() -> Self {
        Self {
            method: CiMethod::BootstrapPercentile,
            level: 0.95,
            bootstrap_reps: 1000,
            seed: 0,
        }
    }
}

impl CiSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} not in (0,1)", self.level)));
        }
        if self.method == CiMethod::BootstrapPercentile {
            if self.bootstrap_reps < 100 {
                return Err(Error::Config(format!(
                    "{} bootstrap replicates; at least 100 are required",
                    self.bootstrap_reps
                )));
            }
            if (self.bootstrap_reps as f64) * (1.0 - self.level) / 2.0 < 1.0 {
                return Err(Error::Config(format!(
                    "{} bootstrap replicates cannot resolve a {} interval",
                    self.bootstrap_reps, self.level
                )));
            }
        }
        Ok(())
    }

    /// `z_{1−α/2}`.
    pub fn z(&self) -> f64 {
        Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + self.level / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval and standard deviation of bootstrap replicates.
pub fn percentile_interval(replicates: &[f64], level: f64) -> Interval {
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Interval {
        se: var.sqrt(),
        lo: quantile_sorted(&s, alpha / 2.0),
        hi: quantile_sorted(&s, 1.0 - alpha / 2.0),
    }
}

/// Draws `n` indices with replacement.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Runs `statistic` on `reps` resamples of `0..n`, replicate `b` using
/// stream `b` of `seed`. Results come back in replicate order.
pub fn bootstrap_map<T, F>(n: usize, reps: usize, seed: u64, statistic: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let idx = resample_indices(&mut rng, n);
            statistic(&idx)
        })
        .collect()
}

/// Settings for re-running the per-arm-mean estimators on resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub fit: FitOptions,
    pub weighting: WeightingOptions,
    pub subclasses: usize,
    /// Newton starting point for the per-replicate score fit (row-major
    /// `(T−1) × K`), typically the full-sample estimate.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            weighting: WeightingOptions::default(),
            subclasses: 5,
            warm_start: None,
        }
    }
}

/// Bootstrap intervals for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub method: Method,
    /// Aligned with `pairs(T)`; empty when the method failed.
    pub intervals: Vec<Interval>,
    pub discarded: usize,
    pub reps: usize,
    pub error: Option<String>,
}

impl BootstrapResult {
    pub fn into_result(self) -> Result<Vec<Interval>> {
        if self.discarded as f64 > MAX_DISCARD_SHARE * self.reps as f64 {
            return Err(Error::ExcessiveDiscard {
                discarded: self.discarded,
                total: self.reps,
            });
        }
        Ok(self.intervals)
    }
}

/// Percentile bootstrap for any subset of {DIF, GPSS, W, GPSM}, sharing
/// resamples and score fits across methods. Discards are counted per method.
pub fn bootstrap_ci(
    d: &Dataset,
    methods: &[Method],
    spec: &CiSpec,
    settings: &BootstrapSettings,
) -> Result<Vec<BootstrapResult>> {
    spec.validate()?;
    for m in methods {
        if !matches!(m, Method::Dif | Method::Gpss | Method::Weighting | Method::Gpsm) {
            return Err(Error::Config(format!(
                "bootstrap intervals are provided for DIF, GPSS, W and GPSM, not {m}"
            )));
        }
    }
    let need_scores = methods.iter().any(|m| m.needs_scores());
    let reps = spec.bootstrap_reps;
    let draws: Vec<Vec<Option<Vec<f64>>>> = bootstrap_map(d.n(), reps, spec.seed, |idx| {
        let Ok(sample) = d.subset(idx) else {
            return vec![None; methods.len()];
        };
        let scores = if need_scores {
            fit_multinomial_logit_from(&sample, &settings.fit, settings.warm_start.as_deref())
                .and_then(|m| m.predict_scores(&sample))
                .ok()
        } else {
            None
        };
        methods
            .iter()
            .map(|m| {
                let set: Option<EffectSet> = match m {
                    Method::Dif => Some(estimate_dif(&sample)),
                    Method::Gpss => scores
                        .as_ref()
                        .and_then(|s| estimate_gpss(&sample, s, settings.subclasses).ok()),
                    Method::Weighting => scores
                        .as_ref()
                        .and_then(|s| estimate_weighting(&sample, s, &settings.weighting).ok()),
                    Method::Gpsm => scores
                        .as_ref()
                        .and_then(|s| estimate_gpsm(&sample, s).ok())
                        .map(|m| m.effects),
                    _ => unreachable!(),
                };
                set.map(|s| s.pair_effects)
            })
            .collect()
    });

    let n_pairs = pairs(d.n_levels()).len();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let kept: Vec<&Vec<f64>> = draws.iter().filter_map(|r| r[k].as_ref()).collect();
            let discarded = reps - kept.len();
            let intervals = if kept.len() >= 2 {
                (0..n_pairs)
                    .map(|p| {
                        let col: Vec<f64> = kept.iter().map(|r| r[p]).collect();
                        percentile_interval(&col, spec.level)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            BootstrapResult {
                method,
                intervals,
                discarded,
                reps,
                error: None,
            }
        })
        .collect())
}

/// `σ̂ᵢ²` from the closest same-arm neighbour on the matching variable.
pub fn neighbour_variances(d_treatment: &[usize], outcome: &[f64], imputed: &ImputedOutcomes) -> Result<Vec<f64>> {
    let t = imputed.n_levels();
    let nn = imputed.match_variable.own_arm_neighbours(d_treatment, t);
    nn.iter()
        .enumerate()
        .map(|(i, l)| match l {
            Some(j) => Ok((outcome[i] - outcome[*j]).powi(2) / 2.0),
            None => Err(Error::TooFewUnits {
                level: d_treatment[i] + 1,
                what: "the matched-sample variance needs a same-arm neighbour",
            }),
        })
        .collect()
}

/// Matched-sample standard errors and normal intervals for every pair.
/// `d` must be the sample the imputations were computed on.
pub fn matching_variance(d: &Dataset, imputed: &ImputedOutcomes, level: f64) -> Result<Vec<Interval>> {
    if imputed.values.nrows() != d.n() || imputed.n_levels() != d.n_levels() {
        return Err(Error::Dimension("imputations do not match the dataset".into()));
    }
    let spec = CiSpec {
        method: CiMethod::MatchingVariance,
        level,
        ..CiSpec::default()
    };
    spec.validate()?;
    let z = spec.z();
    let n = d.n() as f64;
    let treat = d.treatment();
    let sigma2 = neighbour_variances(treat, d.outcome(), imputed)?;
    let k = imputed.reuse_counts(treat);
    let means = imputed.arm_means();
    Ok(pairs(d.n_levels())
        .into_iter()
        .map(|(w, v)| {
            let tau = means[v] - means[w];
            let spread: f64 = imputed
                .values
                .rows()
                .into_iter()
                .map(|r| (r[v] - r[w] - tau).powi(2))
                .sum();
            let reuse: f64 = (0..d.n())
                .filter(|&i| treat[i] == w || treat[i] == v)
                .map(|i| {
                    let ki = k[i] as f64;
                    (ki * ki + ki) * sigma2[i]
                })
                .sum();
            let se = ((spread + reuse) / (n * n)).sqrt();
            Interval {
                se,
                lo: tau - z * se,
                hi: tau + z * se,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{impute_matrix, ImputeSpec};
    use crate::gps::ScoreMatrix;
    use ndarray::Array2;

    #[test]
    fn spec_validation() {
        assert!(CiSpec::default().validate().is_ok());
        assert!(CiSpec { bootstrap_reps: 50, ..CiSpec::default() }.validate().is_err());
        assert!(CiSpec { level: 1.0, ..CiSpec::default() }.validate().is_err());
        assert!(CiSpec { level: 0.999, bootstrap_reps: 1000, ..CiSpec::default() }
            .validate()
            .is_err());
        assert!((CiSpec::default().z() - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.125), 1.5);
    }

    #[test]
    fn constant_outcome_gives_zero_width() {
        let d = Dataset::from_parts(
            Array2::zeros((30, 1)),
            (0..30).map(|i| i % 3).collect(),
            vec![2.5; 30],
            false,
        )
        .unwrap();
        let spec = CiSpec { bootstrap_reps: 200, seed: 4, ..CiSpec::default() };
        let r = bootstrap_ci(&d, &[Method::Dif], &spec, &BootstrapSettings::default()).unwrap();
        for iv in r[0].clone().into_result().unwrap() {
            assert_eq!(iv.lo, iv.hi);
            assert_eq!(iv.se, 0.0);
        }
    }

    #[test]
    fn bootstrap_rejects_matching_methods() {
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 1, 0, 1], vec![0.0; 4], false).unwrap();
        let err = bootstrap_ci(&d, &[Method::Cov], &CiSpec::default(), &BootstrapSettings::default());
        assert!(err.is_err());
    }

    #[test]
    fn excessive_discard_is_an_error() {
        let r = BootstrapResult { method: Method::Gpss, intervals: vec![], discarded: 60, reps: 1000, error: None };
        assert!(matches!(r.into_result(), Err(Error::ExcessiveDiscard { discarded: 60, total: 1000 })));
    }

    #[test]
    fn exact_imputations_leave_only_the_reuse_term() {
        // Pairs share scores across arms and outcomes agree within pairs, so
        // every imputation is exact and the spread term vanishes. Each unit is
        // used once (K = 1) and every same-arm neighbour differs by 2 in Y
        // (σ² = 2): V = 6·(1 + 1)·2 / 6² = 2/3.
        let rows: Vec<f64> = [0.2, 0.2, 0.5, 0.5, 0.7, 0.7]
            .iter()
            .flat_map(|&p| [p, 1.0 - p])
            .collect();
        let s = ScoreMatrix::new(Array2::from_shape_vec((6, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(
            Array2::zeros((6, 1)),
            vec![0, 1, 0, 1, 0, 1],
            vec![1.0, 1.0, 3.0, 3.0, 5.0, 5.0],
            false,
        )
        .unwrap();
        let m = estimate_gpsm(&d, &s).unwrap();
        assert_eq!(m.effects.tau(0, 1), 0.0);
        let iv = matching_variance(&d, &m.imputed, 0.95).unwrap();
        assert!((iv[0].se - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(iv[0].contains(0.0));
        assert!((iv[0].hi + iv[0].lo).abs() < 1e-12);
    }

    #[test]
    fn singleton_arm_is_an_error() {
        let rows: Vec<f64> = [0.2, 0.4, 0.6].iter().flat_map(|&p| [p, 1.0 - p]).collect();
        let s = ScoreMatrix::new(Array2::from_shape_vec((3, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(Array2::zeros((3, 1)), vec![0, 0, 1], vec![1.0, 2.0, 3.0], false).unwrap();
        let imp = impute_matrix(&d, ImputeSpec::GpsScalar(&s)).unwrap();
        assert!(matches!(matching_variance(&d, &imp, 0.95), Err(Error::TooFewUnits { level: 2, .. })));
    }
}
