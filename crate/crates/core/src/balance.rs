//! Balance diagnostics: normalized differences for covariates and for the
//! generalized propensity score, and overlap histograms of `p(w|X)`.
//!
//! The normalized difference for level `w` is the arm mean minus the
//! complement mean, divided by the root of the average (over all `T` levels)
//! of within-arm variances with divisor `N_w − 1`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gps::ScoreMatrix;

fn normalized_difference(values: &[f64], treatment: &[usize], n_levels: usize, w: usize) -> Result<Option<f64>> {
    let mut sum = vec![0.0; n_levels];
    let mut count = vec![0usize; n_levels];
    for (&v, &t) in values.iter().zip(treatment) {
        sum[t] += v;
        count[t] += 1;
    }
    if let Some(level) = count.iter().position(|&c| c < 2) {
        return Err(Error::TooFewUnits {
            level: level + 1,
            what: "within-arm variance needs two units per arm",
        });
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; n_levels];
    for (&v, &t) in values.iter().zip(treatment) {
        ss[t] += (v - mean[t]).powi(2);
    }
    let pooled = (0..n_levels).map(|t| ss[t] / (count[t] - 1) as f64).sum::<f64>() / n_levels as f64;
    let n = values.len();
    let rest_sum: f64 = sum.iter().sum::<f64>() - sum[w];
    let rest_mean = rest_sum / (n - count[w]) as f64;
    let diff = mean[w] - rest_mean;
    if diff == 0.0 {
        return Ok(Some(0.0));
    }
    if pooled <= 0.0 {
        return Ok(None);
    }
    Ok(Some(diff / pooled.sqrt()))
}

/// Normalized difference of covariate column `k` for level `w`; `None` when
/// the pooled within-arm standard deviation is zero.
pub fn normalized_diff_cov(d: &Dataset, w: usize, k: usize) -> Result<Option<f64>> {
    if k >= d.k() || w >= d.n_levels() {
        return Err(Error::Dimension(format!("no covariate {k} / level {}", w + 1)));
    }
    let col = d.covariates().column(k).to_vec();
    normalized_difference(&col, d.treatment(), d.n_levels(), w)
}

/// Normalized difference of `p(w|X)` between arm `w` and its complement.
pub fn normalized_diff_gps(d: &Dataset, s: &ScoreMatrix, w: usize) -> Result<Option<f64>> {
    s.check_matches(d)?;
    if w >= d.n_levels() {
        return Err(Error::Dimension(format!("no level {}", w + 1)));
    }
    let col = s.column(w).to_vec();
    normalized_difference(&col, d.treatment(), d.n_levels(), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    /// 1-based level.
    pub level: usize,
    pub edges: Vec<f64>,
    /// Units with `W = w`.
    pub own_arm: Vec<usize>,
    /// Units with `W ≠ w`.
    pub other_arms: Vec<usize>,
}

/// Equal-width histogram of `p(w|X)` on `[0, 1]`, split by `W = w`.
pub fn overlap_histogram(d: &Dataset, s: &ScoreMatrix, w: usize, bins: usize) -> Result<OverlapHistogram> {
    s.check_matches(d)?;
    if bins < 2 {
        return Err(Error::Config("histograms need at least 2 bins".into()));
    }
    let edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut own = vec![0; bins];
    let mut other = vec![0; bins];
    for (i, &t) in d.treatment().iter().enumerate() {
        let b = ((s.get(i, w) * bins as f64).floor() as usize).min(bins - 1);
        if t == w {
            own[b] += 1;
        } else {
            other[b] += 1;
        }
    }
    Ok(OverlapHistogram {
        level: w + 1,
        edges,
        own_arm: own,
        other_arms: other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub level: usize,
    pub covariate: String,
    pub nd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsBalance {
    pub level: usize,
    pub nd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub covariates: Vec<CovariateBalance>,
    pub gps: Vec<GpsBalance>,
    pub histograms: Vec<OverlapHistogram>,
}

impl BalanceReport {
    /// `max_w |nd_w^GPS|` over defined entries.
    pub fn max_abs_gps_nd(&self) -> f64 {
        self.gps.iter().filter_map(|g| g.nd).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// One row per metric: `metric,level,covariate,value`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["metric", "level", "covariate", "value"])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"));
        for c in &self.covariates {
            wtr.write_record(["nd_cov", &c.level.to_string(), &c.covariate, &fmt(c.nd)])?;
        }
        for g in &self.gps {
            wtr.write_record(["nd_gps", &g.level.to_string(), "", &fmt(g.nd)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full report over every level and every non-intercept covariate.
pub fn balance_report(d: &Dataset, s: &ScoreMatrix, bins: usize) -> Result<BalanceReport> {
    let first = usize::from(d.has_intercept());
    let mut covariates = Vec::new();
    for w in 0..d.n_levels() {
        for k in first..d.k() {
            covariates.push(CovariateBalance {
                level: w + 1,
                covariate: d.covariate_names()[k].clone(),
                nd: normalized_diff_cov(d, w, k)?,
            });
        }
    }
    let gps = (0..d.n_levels())
        .map(|w| Ok(GpsBalance { level: w + 1, nd: normalized_diff_gps(d, s, w)? }))
        .collect::<Result<Vec<_>>>()?;
    let histograms = (0..d.n_levels())
        .map(|w| overlap_histogram(d, s, w, bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(BalanceReport { covariates, gps, histograms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn hand_value_cov() {
        // arm 1 {0,2}, arm 2 {2,4}: nd = (1 - 3)/sqrt(2)
        let d = Dataset::from_parts(array![[0.0], [2.0], [2.0], [4.0]], vec![0, 0, 1, 1], vec![0.0; 4], false)
            .unwrap();
        let nd = normalized_diff_cov(&d, 0, 0).unwrap().unwrap();
        assert!((nd + 2f64.sqrt()).abs() < 1e-12);
        let nd2 = normalized_diff_cov(&d, 1, 0).unwrap().unwrap();
        assert!((nd2 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn equal_distributions_give_zero() {
        let d = Dataset::from_parts(
            array![[1.0], [5.0], [1.0], [5.0], [1.0], [5.0]],
            vec![0, 0, 1, 1, 2, 2],
            vec![0.0; 6],
            false,
        )
        .unwrap();
        for w in 0..3 {
            assert_eq!(normalized_diff_cov(&d, w, 0).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn affine_invariance() {
        let x = array![[0.3], [1.7], [2.2], [-0.4], [0.9], [3.1]];
        let treat = vec![0, 1, 1, 0, 2, 2];
        let d = Dataset::from_parts(x.clone(), treat.clone(), vec![0.0; 6], false).unwrap();
        let d2 = Dataset::from_parts(x.mapv(|v| 2.5 * v - 7.0), treat, vec![0.0; 6], false).unwrap();
        for w in 0..3 {
            let a = normalized_diff_cov(&d, w, 0).unwrap().unwrap();
            let b = normalized_diff_cov(&d2, w, 0).unwrap().unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_spread_is_undefined() {
        // within-arm constant but different across arms
        let d = Dataset::from_parts(array![[1.0], [1.0], [3.0], [3.0]], vec![0, 0, 1, 1], vec![0.0; 4], false)
            .unwrap();
        assert_eq!(normalized_diff_cov(&d, 0, 0).unwrap(), None);
    }

    #[test]
    fn gps_hand_value() {
        // p(1|x): arm 1 {0.6, 0.8}, arm 2 {0.2, 0.4}; variances 0.02 each
        let rows = vec![0.6, 0.4, 0.8, 0.2, 0.2, 0.8, 0.4, 0.6];
        let s = ScoreMatrix::new(Array2::from_shape_vec((4, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 0, 1, 1], vec![0.0; 4], false).unwrap();
        let nd = normalized_diff_gps(&d, &s, 0).unwrap().unwrap();
        assert!((nd - 0.4 / 0.02f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_scores_short_circuit() {
        let s = ScoreMatrix::new(Array2::from_elem((4, 2), 0.5)).unwrap();
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 0, 1, 1], vec![0.0; 4], false).unwrap();
        assert_eq!(normalized_diff_gps(&d, &s, 0).unwrap(), Some(0.0));
    }

    #[test]
    fn too_few_units() {
        let d = Dataset::from_parts(array![[1.0], [2.0], [3.0]], vec![0, 0, 1], vec![0.0; 3], false).unwrap();
        assert!(normalized_diff_cov(&d, 0, 0).is_err());
    }

    #[test]
    fn histogram_point_mass_and_partition() {
        let s = ScoreMatrix::new(Array2::from_elem((5, 2), 0.5)).unwrap();
        let d = Dataset::from_parts(Array2::zeros((5, 1)), vec![0, 0, 1, 1, 1], vec![0.0; 5], false).unwrap();
        let h = overlap_histogram(&d, &s, 0, 20).unwrap();
        assert_eq!(h.own_arm.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.other_arms.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.own_arm.iter().sum::<usize>(), 2);
        assert_eq!(h.other_arms.iter().sum::<usize>(), 3);
        assert_eq!(h.edges.len(), 21);
        assert!(overlap_histogram(&d, &s, 0, 1).is_err());
    }
}
