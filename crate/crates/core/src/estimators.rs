//! Pairwise average treatment effect estimators.
//!
//! Every estimator except PPSM first estimates the per-arm means `Ê[Y(w)]`
//! on a common reference population and reports `τ̂(w,w′) = Ê[Y(w′)] − Ê[Y(w)]`,
//! which makes the full set of contrasts additive. PPSM estimates each pair
//! on the units in that pair only.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gps::{fit_multinomial_logit, FitOptions, ScoreMatrix};
use crate::matching::{
    mahalanobis_matrix, match_scalar, match_vector, nearest_in_own_arm_scalar,
    nearest_in_own_arm_vector, whiten, MatchColumn,
};

/// Scores below this are treated as zero by the weighting estimator when
/// clipping is off.
pub const ZERO_SCORE: f64 = 1e-12;
/// Default floor when clipping is enabled.
pub const DEFAULT_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DIF")]
    Dif,
    #[serde(rename = "PPSM")]
    Ppsm,
    #[serde(rename = "PSSM")]
    Pssm,
    #[serde(rename = "W")]
    Weighting,
    #[serde(rename = "COV")]
    Cov,
    #[serde(rename = "GPSM")]
    Gpsm,
    #[serde(rename = "GPSS")]
    Gpss,
}

impl Method {
    /// All seven, in the order of the simulation tables.
    pub const ALL: [Method; 7] = [
        Method::Dif,
        Method::Ppsm,
        Method::Pssm,
        Method::Weighting,
        Method::Cov,
        Method::Gpsm,
        Method::Gpss,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Dif => "DIF",
            Method::Ppsm => "PPSM",
            Method::Pssm => "PSSM",
            Method::Weighting => "W",
            Method::Cov => "COV",
            Method::Gpsm => "GPSM",
            Method::Gpss => "GPSS",
        }
    }

    /// Whether the method is built from per-arm means (and hence additive).
    pub fn is_per_arm_mean(self) -> bool {
        self != Method::Ppsm
    }

    /// Whether the method needs a fitted generalized propensity score.
    pub fn needs_scores(self) -> bool {
        matches!(self, Method::Pssm | Method::Weighting | Method::Gpsm | Method::Gpss)
    }

    /// Whether the method's imputations come from matching.
    pub fn is_matching(self) -> bool {
        matches!(self, Method::Ppsm | Method::Pssm | Method::Cov | Method::Gpsm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Population {
    FullSample,
    TrimmedSample,
    PairwiseSubpopulation,
}

impl Population {
    pub fn tag(self) -> &'static str {
        match self {
            Population::FullSample => "full-sample",
            Population::TrimmedSample => "trimmed-sample",
            Population::PairwiseSubpopulation => "pairwise-subpopulation",
        }
    }
}

/// All unordered pairs `(w, w′)` with `w < w′`, lexicographically.
pub fn pairs(n_levels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_levels * (n_levels.saturating_sub(1)) / 2);
    for w in 0..n_levels {
        for v in (w + 1)..n_levels {
            out.push((w, v));
        }
    }
    out
}

/// One contrast as exported (levels are 0-based here, 1-based in files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub w: usize,
    pub w_prime: usize,
    pub tau_hat: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub population: Population,
    pub n_used: usize,
}

/// Point estimates for every pair of levels from one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSet {
    pub method: Method,
    pub population: Population,
    pub n_levels: usize,
    /// `Ê[Y(w)]`, present for per-arm-mean methods.
    pub arm_means: Option<Vec<f64>>,
    /// `τ̂(w,w′)` for `pairs(n_levels)`, in order.
    pub pair_effects: Vec<f64>,
    /// Units used per pair.
    pub n_used: Vec<usize>,
}

impl EffectSet {
    pub fn from_arm_means(method: Method, population: Population, means: Vec<f64>, n_used: usize) -> Self {
        let t = means.len();
        let pair_effects = pairs(t).into_iter().map(|(w, v)| means[v] - means[w]).collect();
        Self {
            method,
            population,
            n_levels: t,
            arm_means: Some(means),
            pair_effects,
            n_used: vec![n_used; t * (t - 1) / 2],
        }
    }

    /// `τ̂(w,w′)` for any ordered pair; antisymmetric with `τ̂(w,w) = 0`.
    pub fn tau(&self, w: usize, w_prime: usize) -> f64 {
        if w == w_prime {
            return 0.0;
        }
        if let Some(m) = &self.arm_means {
            return m[w_prime] - m[w];
        }
        let (a, b, sign) = if w < w_prime { (w, w_prime, 1.0) } else { (w_prime, w, -1.0) };
        sign * self.pair_effects[pair_index(self.n_levels, a, b)]
    }

    pub fn estimates(&self) -> Vec<EffectEstimate> {
        pairs(self.n_levels)
            .into_iter()
            .enumerate()
            .map(|(p, (w, v))| EffectEstimate {
                method: self.method,
                w,
                w_prime: v,
                tau_hat: self.pair_effects[p],
                se: None,
                ci_lo: None,
                ci_hi: None,
                population: self.population,
                n_used: self.n_used[p],
            })
            .collect()
    }

    pub fn with_population(mut self, population: Population) -> Self {
        if self.method.is_per_arm_mean() {
            self.population = population;
        }
        self
    }
}

/// Position of `(w, w′)`, `w < w′`, in [`pairs`].
pub fn pair_index(n_levels: usize, w: usize, w_prime: usize) -> usize {
    debug_assert!(w < w_prime && w_prime < n_levels);
    w * n_levels - w * (w + 1) / 2 + (w_prime - w - 1)
}

/// Which matching function produced the imputed outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Mahalanobis matching on covariates.
    Covariates,
    /// Euclidean matching on `(p(1|x), …, p(T−1|x))`.
    ScoreVector,
    /// Matching on the scalar `p(w|x)` for target arm `w`.
    GpsScalar,
    /// Binary propensity score shared by both arms (pairwise matching).
    BinaryScore,
}

/// The variable each arm was matched on, kept for within-arm variance estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchVariable {
    /// Column `w` is the variable for arm `w`.
    PerLevelScalar(Array2<f64>),
    SharedScalar(Vec<f64>),
    Vector(Array2<f64>),
}

impl MatchVariable {
    /// Nearest other unit in the same arm on this arm's matching variable.
    pub fn own_arm_neighbours(&self, treatment: &[usize], n_levels: usize) -> Vec<Option<usize>> {
        match self {
            MatchVariable::SharedScalar(v) => nearest_in_own_arm_scalar(v, treatment, n_levels),
            MatchVariable::Vector(rows) => nearest_in_own_arm_vector(rows.view(), treatment, n_levels),
            MatchVariable::PerLevelScalar(cols) => {
                let mut out = vec![None; treatment.len()];
                for w in 0..n_levels {
                    let col = cols.column(w).to_vec();
                    let nn = nearest_in_own_arm_scalar(&col, treatment, n_levels);
                    for (i, &wi) in treatment.iter().enumerate() {
                        if wi == w {
                            out[i] = nn[i];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Full `N × T` matrix of imputed potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedOutcomes {
    pub values: Array2<f64>,
    pub matches: Vec<MatchColumn>,
    pub provenance: Provenance,
    pub match_variable: MatchVariable,
}

impl ImputedOutcomes {
    pub fn n_levels(&self) -> usize {
        self.values.ncols()
    }

    /// `N⁻¹ Σᵢ Ŷᵢ(w)` for each `w`.
    pub fn arm_means(&self) -> Vec<f64> {
        let n = self.values.nrows() as f64;
        self.values.columns().into_iter().map(|c| c.sum() / n).collect()
    }

    /// `K_i`: times unit `i` serves as a match for another unit into its own arm.
    pub fn reuse_counts(&self, treatment: &[usize]) -> Vec<usize> {
        let n = treatment.len();
        let per_level: Vec<Vec<usize>> = self.matches.iter().map(|m| m.reuse_counts(n)).collect();
        treatment.iter().enumerate().map(|(i, &w)| per_level[w][i]).collect()
    }
}

/// Matching variable for [`impute_matrix`].
#[derive(Debug, Clone, Copy)]
pub enum ImputeSpec<'a> {
    /// Mahalanobis matching with the given `V` (use [`mahalanobis_matrix`]).
    Covariates(&'a Array2<f64>),
    ScoreVector(&'a ScoreMatrix),
    GpsScalar(&'a ScoreMatrix),
}

pub fn impute_matrix(d: &Dataset, spec: ImputeSpec<'_>) -> Result<ImputedOutcomes> {
    let t = d.n_levels();
    let y = d.outcome();
    let (matches, provenance, match_variable) = match spec {
        ImputeSpec::Covariates(v) => {
            let z = whiten(d.substantive_covariates().view(), v)?;
            let m = (0..t)
                .map(|w| match_vector(z.view(), z.view(), d.treatment(), w))
                .collect::<Result<Vec<_>>>()?;
            (m, Provenance::Covariates, MatchVariable::Vector(z))
        }
        ImputeSpec::ScoreVector(s) => {
            s.check_matches(d)?;
            let rows = s.leading_columns();
            let m = (0..t)
                .map(|w| match_vector(rows, rows, d.treatment(), w))
                .collect::<Result<Vec<_>>>()?;
            (m, Provenance::ScoreVector, MatchVariable::Vector(rows.to_owned()))
        }
        ImputeSpec::GpsScalar(s) => {
            s.check_matches(d)?;
            let m = (0..t)
                .map(|w| {
                    let col = s.column(w).to_vec();
                    match_scalar(&col, &col, d.treatment(), w)
                })
                .collect::<Result<Vec<_>>>()?;
            (m, Provenance::GpsScalar, MatchVariable::PerLevelScalar(s.view().to_owned()))
        }
    };
    Ok(ImputedOutcomes {
        values: fill_imputed(y, &matches),
        matches,
        provenance,
        match_variable,
    })
}

fn fill_imputed(y: &[f64], matches: &[MatchColumn]) -> Array2<f64> {
    let mut values = Array2::zeros((y.len(), matches.len()));
    for (w, m) in matches.iter().enumerate() {
        for (i, &j) in m.donors.iter().enumerate() {
            values[[i, w]] = y[j];
        }
    }
    values
}

/// Estimates with the imputations they were built from.
#[derive(Debug, Clone)]
pub struct MatchedEstimate {
    pub effects: EffectSet,
    pub imputed: ImputedOutcomes,
}

pub fn estimate_dif(d: &Dataset) -> EffectSet {
    let t = d.n_levels();
    let mut sums = vec![0.0; t];
    let counts = d.arm_counts();
    for (&w, &y) in d.treatment().iter().zip(d.outcome()) {
        sums[w] += y;
    }
    let means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    EffectSet::from_arm_means(Method::Dif, Population::FullSample, means, d.n())
}

/// Matching on all covariates under the Mahalanobis metric.
pub fn estimate_cov(d: &Dataset) -> Result<MatchedEstimate> {
    let v = mahalanobis_matrix(d)?;
    matched(d, Method::Cov, ImputeSpec::Covariates(&v))
}

/// Matching on the scalar `p(w|x)` separately for each target arm.
pub fn estimate_gpsm(d: &Dataset, s: &ScoreMatrix) -> Result<MatchedEstimate> {
    matched(d, Method::Gpsm, ImputeSpec::GpsScalar(s))
}

/// Matching on the `(T−1)`-vector of scores.
pub fn estimate_pssm(d: &Dataset, s: &ScoreMatrix) -> Result<MatchedEstimate> {
    matched(d, Method::Pssm, ImputeSpec::ScoreVector(s))
}

fn matched(d: &Dataset, method: Method, spec: ImputeSpec<'_>) -> Result<MatchedEstimate> {
    let imputed = impute_matrix(d, spec)?;
    let effects = EffectSet::from_arm_means(method, Population::FullSample, imputed.arm_means(), d.n());
    Ok(MatchedEstimate { effects, imputed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightNormalization {
    /// Weights normalised within each arm.
    #[default]
    Hajek,
    /// Unnormalised inverse-probability weights, `N⁻¹ Σ Y/p`.
    HorvitzThompson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingOptions {
    /// Floor applied to scores; `None` makes zero scores an error.
    pub clip: Option<f64>,
    pub normalization: WeightNormalization,
}

pub fn estimate_weighting(d: &Dataset, s: &ScoreMatrix, opts: &WeightingOptions) -> Result<EffectSet> {
    s.check_matches(d)?;
    let t = d.n_levels();
    let mut num = vec![0.0; t];
    let mut den = vec![0.0; t];
    for (i, (&w, &y)) in d.treatment().iter().zip(d.outcome()).enumerate() {
        let p = effective_score(i, w, s.get(i, w), opts.clip)?;
        num[w] += y / p;
        den[w] += 1.0 / p;
    }
    let means = match opts.normalization {
        WeightNormalization::Hajek => num.iter().zip(&den).map(|(a, b)| a / b).collect(),
        WeightNormalization::HorvitzThompson => num.iter().map(|a| a / d.n() as f64).collect(),
    };
    Ok(EffectSet::from_arm_means(Method::Weighting, Population::FullSample, means, d.n()))
}

fn effective_score(unit: usize, level: usize, p: f64, clip: Option<f64>) -> Result<f64> {
    match clip {
        Some(floor) => Ok(p.max(floor)),
        None if p < ZERO_SCORE => Err(Error::ZeroScore {
            unit: unit + 1,
            level: level + 1,
            score: p,
        }),
        None => Ok(p),
    }
}

/// Largest inverse-probability weight in each arm after normalising the
/// arm's weights to average one.
pub fn max_normalized_weights(d: &Dataset, s: &ScoreMatrix) -> Result<Vec<f64>> {
    s.check_matches(d)?;
    let t = d.n_levels();
    let mut total = vec![0.0; t];
    let mut max = vec![0.0f64; t];
    for (i, &w) in d.treatment().iter().enumerate() {
        let inv = 1.0 / effective_score(i, w, s.get(i, w), None)?;
        total[w] += inv;
        max[w] = max[w].max(inv);
    }
    let counts = d.arm_counts();
    Ok((0..t).map(|w| max[w] * counts[w] as f64 / total[w]).collect())
}

/// Subclass (0-based) of each value: `J` groups split at empirical
/// quantiles, with membership `q_{j−1} < p ≤ q_j`.
pub fn subclass_assignment(values: &[f64], subclasses: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // q_j = smallest value with empirical CDF ≥ j/J
    let bounds: Vec<f64> = (1..subclasses)
        .map(|j| sorted[((j * n).div_ceil(subclasses)).max(1) - 1])
        .collect();
    values
        .iter()
        .map(|&p| bounds.partition_point(|&q| q < p))
        .collect()
}

/// Subclassification on `p(w|x)` with `J` quantile subclasses per arm,
/// weighting subclass means by `N_j / N`.
pub fn estimate_gpss(d: &Dataset, s: &ScoreMatrix, subclasses: usize) -> Result<EffectSet> {
    s.check_matches(d)?;
    if subclasses == 0 {
        return Err(Error::Config("need at least one subclass".into()));
    }
    let t = d.n_levels();
    let n = d.n();
    let y = d.outcome();
    let mut means = Vec::with_capacity(t);
    for w in 0..t {
        let col = s.column(w).to_vec();
        let class = subclass_assignment(&col, subclasses);
        let mut total = vec![0usize; subclasses];
        let mut arm = vec![0usize; subclasses];
        let mut sum = vec![0.0; subclasses];
        for i in 0..n {
            let j = class[i];
            total[j] += 1;
            if d.treatment()[i] == w {
                arm[j] += 1;
                sum[j] += y[i];
            }
        }
        let mut mean = 0.0;
        for j in 0..subclasses {
            if total[j] == 0 {
                continue;
            }
            if arm[j] == 0 {
                return Err(Error::EmptySubclass {
                    subclass: j + 1,
                    level: w + 1,
                });
            }
            mean += (total[j] as f64 / n as f64) * (sum[j] / arm[j] as f64);
        }
        means.push(mean);
    }
    Ok(EffectSet::from_arm_means(Method::Gpss, Population::FullSample, means, n))
}

/// Pairwise binary propensity score matching for one pair.
#[derive(Debug, Clone)]
pub struct PairwiseEstimate {
    pub w: usize,
    pub w_prime: usize,
    pub tau_hat: f64,
    /// The restricted sample, coded 0 = `w`, 1 = `w′`.
    pub sample: Dataset,
    pub imputed: ImputedOutcomes,
}

/// Restricts to `W ∈ {w, w′}`, fits a fresh binary logit there and matches
/// every restricted unit into both arms on that score.
pub fn estimate_ppsm(d: &Dataset, pair: (usize, usize), fit: &FitOptions) -> Result<PairwiseEstimate> {
    let (w, v) = pair;
    if w == v {
        return Err(Error::Config("PPSM needs two distinct levels".into()));
    }
    let sample = d.restrict_levels(&[w, v])?;
    let model = fit_multinomial_logit(&sample, fit)?;
    let scores = model.predict_scores(&sample)?;
    let e = scores.column(0).to_vec();
    let matches = (0..2)
        .map(|a| match_scalar(&e, &e, sample.treatment(), a))
        .collect::<Result<Vec<_>>>()?;
    let imputed = ImputedOutcomes {
        values: fill_imputed(sample.outcome(), &matches),
        matches,
        provenance: Provenance::BinaryScore,
        match_variable: MatchVariable::SharedScalar(e),
    };
    let m = imputed.arm_means();
    Ok(PairwiseEstimate {
        w,
        w_prime: v,
        tau_hat: m[1] - m[0],
        sample,
        imputed,
    })
}

/// PPSM over all pairs.
pub fn estimate_ppsm_all(d: &Dataset, fit: &FitOptions) -> Result<(EffectSet, Vec<PairwiseEstimate>)> {
    let t = d.n_levels();
    let per_pair = pairs(t)
        .into_iter()
        .map(|p| estimate_ppsm(d, p, fit))
        .collect::<Result<Vec<_>>>()?;
    let set = EffectSet {
        method: Method::Ppsm,
        population: Population::PairwiseSubpopulation,
        n_levels: t,
        arm_means: None,
        pair_effects: per_pair.iter().map(|p| p.tau_hat).collect(),
        n_used: per_pair.iter().map(|p| p.sample.n()).collect(),
    };
    Ok((set, per_pair))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scores(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        let t = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        ScoreMatrix::new(Array2::from_shape_vec((flat.len() / t, t), flat).unwrap()).unwrap()
    }

    #[test]
    fn pair_index_matches_pairs() {
        for t in 2..7 {
            for (p, (w, v)) in pairs(t).into_iter().enumerate() {
                assert_eq!(pair_index(t, w, v), p);
            }
        }
    }

    #[test]
    fn dif_arithmetic() {
        let d = Dataset::from_parts(
            Array2::zeros((6, 1)),
            vec![0, 0, 1, 1, 2, 2],
            vec![0.5, 1.5, 3.0, 4.0, 2.0, 2.0],
            false,
        )
        .unwrap();
        let e = estimate_dif(&d);
        assert_eq!(e.tau(0, 1), 2.5);
        assert_eq!(e.tau(1, 2), -1.5);
        assert_eq!(e.tau(0, 2), 1.0);
        assert_eq!(e.tau(2, 0), -1.0);
        assert_eq!(e.tau(1, 1), 0.0);
    }

    #[test]
    fn hajek_hand_value() {
        // arm 0: scores 0.5, 0.25, 0.25 and outcomes 1, 2, 2 -> (2+8+8)/(2+4+4)
        let d = Dataset::from_parts(
            Array2::zeros((4, 1)),
            vec![0, 0, 0, 1],
            vec![1.0, 2.0, 2.0, 0.0],
            false,
        )
        .unwrap();
        let s = scores(vec![vec![0.5, 0.5], vec![0.25, 0.75], vec![0.25, 0.75], vec![0.5, 0.5]]);
        let e = estimate_weighting(&d, &s, &WeightingOptions::default()).unwrap();
        assert!((e.arm_means.unwrap()[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn constant_scores_weighting_is_dif() {
        let d = Dataset::from_parts(
            Array2::zeros((6, 1)),
            vec![0, 1, 2, 0, 1, 2],
            vec![1.0, 5.0, 2.0, 3.0, 0.0, 7.0],
            false,
        )
        .unwrap();
        let s = ScoreMatrix::new(Array2::from_elem((6, 3), 1.0 / 3.0)).unwrap();
        let w = estimate_weighting(&d, &s, &WeightingOptions::default()).unwrap();
        let dif = estimate_dif(&d);
        for (a, b) in w.pair_effects.iter().zip(&dif.pair_effects) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_score_is_an_error_unless_clipped() {
        let d = Dataset::from_parts(Array2::zeros((2, 1)), vec![0, 1], vec![1.0, 2.0], false).unwrap();
        let s = scores(vec![vec![0.0, 1.0], vec![0.5, 0.5]]);
        let err = estimate_weighting(&d, &s, &WeightingOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ZeroScore { unit: 1, level: 1, .. }));
        let clipped = WeightingOptions { clip: Some(DEFAULT_CLIP), ..Default::default() };
        assert!(estimate_weighting(&d, &s, &clipped).is_ok());
    }

    #[test]
    fn horvitz_thompson() {
        let d = Dataset::from_parts(Array2::zeros((2, 1)), vec![0, 1], vec![1.0, 2.0], false).unwrap();
        let s = scores(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let opts = WeightingOptions { clip: None, normalization: WeightNormalization::HorvitzThompson };
        let e = estimate_weighting(&d, &s, &opts).unwrap();
        assert_eq!(e.arm_means.unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn subclass_boundaries_are_quantiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(subclass_assignment(&v, 5), vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        assert_eq!(subclass_assignment(&v, 3), vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn gpss_hand_value() {
        // T=2, J=2. p(1|x) = 0.1..1.0 in steps; p(2|x) = 1 - p(1|x).
        let p1: Vec<f64> = (1..=10).map(|k| f64::from(k) / 10.0 - 0.05).collect();
        let treat = vec![0, 1, 0, 1, 1, 0, 1, 0, 0, 0];
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let d = Dataset::from_parts(Array2::zeros((10, 1)), treat, y, false).unwrap();
        let s = scores(p1.iter().map(|&p| vec![p, 1.0 - p]).collect());
        let e = estimate_gpss(&d, &s, 2).unwrap();
        // arm 1: low class (units 0-4) treated {0,2}: mean 1; high class {5,7,8,9}: mean 7.25
        // arm 2 on p(2|x): low class = units 5-9 -> treated {6}: 6; high class units 0-4 -> {1,3,4}: 8/3
        let m = e.arm_means.unwrap();
        assert!((m[0] - (0.5 * 1.0 + 0.5 * 7.25)).abs() < 1e-12);
        assert!((m[1] - (0.5 * 6.0 + 0.5 * 8.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn gpss_empty_cell() {
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 0, 1, 1], vec![0.0; 4], false).unwrap();
        let s = scores(vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.2, 0.8]]);
        let err = estimate_gpss(&d, &s, 2).unwrap_err();
        assert!(matches!(err, Error::EmptySubclass { .. }));
    }

    #[test]
    fn gpsm_six_unit_hand_value() {
        let s = scores(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
            vec![0.45, 0.35, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.25, 0.25, 0.5],
        ]);
        let treat = vec![0, 1, 2, 0, 1, 2];
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let d = Dataset::from_parts(Array2::zeros((6, 1)), treat, y, false).unwrap();
        let m = estimate_gpsm(&d, &s).unwrap();
        // arm 0 donors: unit0 (0.5), unit3 (0.45) on p(1|x)
        //  queries 0.5->0, 0.2->3, 0.3->3, 0.45->3, 0.1->3, 0.25->3 : Y = 1,4,4,4,4,4
        // arm 1 donors: unit1 (0.5), unit4 (0.6) on p(2|x)
        //  queries 0.3->1, 0.5->1, 0.3->1, 0.35->1, 0.6->4, 0.25->1 : Y = 2,2,2,2,5,2
        // arm 2 donors: unit2 (0.4), unit5 (0.5) on p(3|x)
        //  queries 0.2->2, 0.3->2, 0.4->2, 0.2->2, 0.3->2, 0.5->5 : Y = 3,3,3,3,3,6
        let means = m.effects.arm_means.unwrap();
        assert!((means[0] - 21.0 / 6.0).abs() < 1e-12);
        assert!((means[1] - 15.0 / 6.0).abs() < 1e-12);
        assert!((means[2] - 21.0 / 6.0).abs() < 1e-12);
        for (i, &w) in d.treatment().iter().enumerate() {
            assert_eq!(m.imputed.values[[i, w]], d.outcome()[i]);
        }
    }

    #[test]
    fn cov_four_unit_hand_value() {
        // 1-D covariate; V is the variance, a positive scalar, so matching is on |x - x'|.
        let d = Dataset::from_parts(
            array![[0.0], [1.0], [3.0], [3.5]],
            vec![0, 1, 0, 1],
            vec![10.0, 20.0, 14.0, 22.0],
            false,
        )
        .unwrap();
        let m = estimate_cov(&d).unwrap();
        // Ŷ(1): 10, 10(x=1 -> 0 at dist 1 vs 3 at dist 2), 14, 14
        // Ŷ(2): 20(x=0 -> 1), 20, 22(x=3 -> 3.5), 22
        let tau = m.effects.tau(0, 1);
        assert!((tau - ((20.0 + 20.0 + 22.0 + 22.0) - (10.0 + 10.0 + 14.0 + 14.0)) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_duplicates_recover_gap() {
        let x = array![[0.0, 1.0], [0.0, 1.0], [2.0, -1.0], [2.0, -1.0], [5.0, 0.5], [5.0, 0.5]];
        let treat = vec![0, 1, 0, 1, 0, 1];
        let y = vec![1.0, 4.0, 2.0, 5.0, -1.0, 2.0];
        let d = Dataset::from_parts(x, treat, y, false).unwrap();
        let m = estimate_cov(&d).unwrap();
        assert!((m.effects.tau(0, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_arm_pool_degenerates() {
        let s = scores(vec![vec![0.2, 0.8], vec![0.4, 0.6], vec![0.7, 0.3]]);
        let d = Dataset::from_parts(Array2::zeros((3, 1)), vec![0, 0, 1], vec![1.0, 2.0, 3.0], false)
            .unwrap();
        let imp = impute_matrix(&d, ImputeSpec::GpsScalar(&s)).unwrap();
        // arm 1 has one donor: every unit imputes its outcome
        assert!(imp.values.column(1).iter().all(|&v| v == 3.0));
        assert_eq!(imp.values[[0, 0]], 1.0);
        assert_eq!(imp.values[[1, 0]], 2.0);
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("XYZ".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Method::Weighting).unwrap(), "\"W\"");
        assert_eq!(serde_json::to_string(&Population::TrimmedSample).unwrap(), "\"trimmed-sample\"");
    }
}
