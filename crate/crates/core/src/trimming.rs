//! Overlap trimming for multi-level treatments.
//!
//! Units are kept when `g(x) = Σ_w 1/p(w|x) ≤ λ`. Minimising the summed
//! variance bound `E[g 1{g≤λ}] / pr(g≤λ)²` over `λ` gives the stationarity
//! condition `λ = 2·E[g | g ≤ λ]`; the sample rule keeps the largest observed
//! `g` value satisfying `g_(k) ≤ 2·(mean of the k smallest g)`, where `k`
//! counts every unit with `g ≤ g_(k)`.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, UnitMask};
use crate::error::{Error, Result};
use crate::estimators::Population;
use crate::gps::{fit_multinomial_logit, FitOptions, GpsModel, ScoreMatrix};

/// `gᵢ = Σ_w 1/p(w|Xᵢ)`.
pub fn inverse_score_sums(s: &ScoreMatrix) -> Vec<f64> {
    s.view()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|p| 1.0 / p).sum())
        .collect()
}

/// Largest feasible threshold among the observed `g` values.
pub fn find_lambda(g: &[f64]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::InvalidData("no units to trim".into()));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidData(format!(
            "inverse-score sum of unit {} is {}",
            i + 1,
            g[i]
        )));
    }
    let mut sorted = g.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = None;
    let mut prefix = 0.0;
    for k in 0..sorted.len() {
        prefix += sorted[k];
        // evaluate only at the end of a run of ties
        if k + 1 < sorted.len() && sorted[k + 1] == sorted[k] {
            continue;
        }
        let count = (k + 1) as f64;
        if sorted[k] <= 2.0 * prefix / count {
            best = Some(sorted[k]);
        }
    }
    // k = 1 is always feasible: g ≤ 2g for g > 0
    Ok(best.expect("smallest candidate is always feasible"))
}

/// Trimmed sample and diagnostics.
#[derive(Debug, Clone)]
pub struct TrimResult {
    pub lambda: f64,
    pub g: Vec<f64>,
    pub mask: UnitMask,
    pub dropped_per_arm: Vec<usize>,
    pub refit: bool,
    /// Covariates that are constant on the retained units, removed from
    /// `dataset`.
    pub dropped_covariates: Vec<String>,
    pub dataset: Dataset,
    /// Scores for the trimmed sample: refitted when `refit`, otherwise the
    /// original scores restricted to retained units.
    pub scores: ScoreMatrix,
    pub model: Option<GpsModel>,
    pub population: Population,
}

impl TrimResult {
    pub fn n_dropped(&self) -> usize {
        self.dropped_per_arm.iter().sum()
    }

    pub fn summary(&self) -> TrimSummary {
        let mut s = self.g.clone();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| crate::inference::quantile_sorted(&s, p);
        TrimSummary {
            lambda: self.lambda,
            n_dropped: self.n_dropped(),
            dropped_per_arm: self.dropped_per_arm.clone(),
            refit: self.refit,
            dropped_covariates: self.dropped_covariates.clone(),
            g_summary: GSummary {
                min: q(0.0),
                q25: q(0.25),
                median: q(0.5),
                q75: q(0.75),
                q95: q(0.95),
                max: q(1.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

/// JSON export of a [`TrimResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimSummary {
    pub lambda: f64,
    pub n_dropped: usize,
    pub dropped_per_arm: Vec<usize>,
    pub refit: bool,
    pub dropped_covariates: Vec<String>,
    pub g_summary: GSummary,
}

pub fn trim(d: &Dataset, s: &ScoreMatrix, refit: bool, fit: &FitOptions) -> Result<TrimResult> {
    s.check_matches(d)?;
    let g = inverse_score_sums(s);
    let lambda = find_lambda(&g)?;
    let mask = UnitMask::new(g.iter().map(|&v| v <= lambda).collect());
    let kept = mask.counts_per_level(d.treatment(), d.n_levels());
    let dropped_per_arm: Vec<usize> = d.arm_counts().iter().zip(&kept).map(|(a, b)| a - b).collect();
    let (dataset, dropped_covariates) = d.apply_mask(&mask)?.without_constant_covariates();
    if !dropped_covariates.is_empty() {
        log::info!("constant after trimming, dropped: {}", dropped_covariates.join(", "));
    }
    let (scores, model) = if refit {
        let m = fit_multinomial_logit(&dataset, fit).map_err(|e| Error::TrimRefit(Box::new(e)))?;
        (m.predict_scores(&dataset)?, Some(m))
    } else {
        (s.select(&mask.indices()), None)
    };
    Ok(TrimResult {
        lambda,
        g,
        mask,
        dropped_per_arm,
        refit,
        dropped_covariates,
        dataset,
        scores,
        model,
        population: Population::TrimmedSample,
    })
}

/// Mask as CSV (`unit,retained`, units 1-based).
pub fn write_mask_csv<W: std::io::Write>(mask: &UnitMask, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["unit", "retained"])?;
    for (i, r) in mask.retained().iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), u8::from(*r).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn worked_example() {
        assert_eq!(find_lambda(&[4.0, 5.0, 6.0, 100.0]).unwrap(), 6.0);
        assert_eq!(find_lambda(&[100.0, 6.0, 4.0, 5.0]).unwrap(), 6.0);
    }

    #[test]
    fn constant_g_keeps_everything() {
        assert_eq!(find_lambda(&[9.0; 17]).unwrap(), 9.0);
    }

    #[test]
    fn invalid_g() {
        assert!(find_lambda(&[]).is_err());
        assert!(find_lambda(&[1.0, f64::NAN]).is_err());
        assert!(find_lambda(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn uniform_scores_trim_nothing() {
        let d = Dataset::from_parts(
            Array2::zeros((9, 1)),
            (0..9).map(|i| i % 3).collect(),
            vec![0.0; 9],
            false,
        )
        .unwrap();
        let s = ScoreMatrix::new(Array2::from_elem((9, 3), 1.0 / 3.0)).unwrap();
        let r = trim(&d, &s, false, &FitOptions::default()).unwrap();
        assert_eq!(r.n_dropped(), 0);
        assert!(r.g.iter().all(|&g| (g - 9.0).abs() < 1e-12));
    }

    #[test]
    fn four_unit_mask() {
        // p(1|x) chosen so that g = 1/p + 1/(1-p) = 4, 5, 6, 100 (smaller root).
        let p_for = |g: f64| (1.0 - (1.0 - 4.0 / g).sqrt()) / 2.0;
        let rows: Vec<f64> = [4.0, 5.0, 6.0, 100.0]
            .iter()
            .flat_map(|&g| {
                let p = p_for(g);
                [p, 1.0 - p]
            })
            .collect();
        let s = ScoreMatrix::new(Array2::from_shape_vec((4, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 1, 0, 1], vec![0.0; 4], false).unwrap();
        let r = trim(&d, &s, false, &FitOptions::default()).unwrap();
        assert_eq!(r.mask.retained(), &[true, true, true, false]);
        assert_eq!(r.dropped_per_arm, vec![0, 1]);
        assert_eq!(r.population, Population::TrimmedSample);
    }

    #[test]
    fn trimming_that_eliminates_an_arm_fails() {
        let rows = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.01, 0.99];
        let s = ScoreMatrix::new(Array2::from_shape_vec((4, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(Array2::zeros((4, 1)), vec![0, 0, 0, 1], vec![0.0; 4], false).unwrap();
        assert!(matches!(
            trim(&d, &s, false, &FitOptions::default()),
            Err(Error::LevelEliminated { level: 2 })
        ));
    }

    #[test]
    fn binary_trimming_is_symmetric_about_one_half() {
        let p: Vec<f64> = (0..200).map(|i| 0.005 + 0.99 * ((i * 37 % 200) as f64 / 199.0).powi(3)).collect();
        let rows: Vec<f64> = p.iter().flat_map(|&v| [v, 1.0 - v]).collect();
        let s = ScoreMatrix::new(Array2::from_shape_vec((200, 2), rows).unwrap()).unwrap();
        let d = Dataset::from_parts(Array2::zeros((200, 1)), (0..200).map(|i| i % 2).collect(), vec![0.0; 200], false)
            .unwrap();
        let r = trim(&d, &s, false, &FitOptions::default()).unwrap();
        assert!(r.n_dropped() > 0);
        let kept = r.mask.retained();
        for i in 0..200 {
            for j in 0..200 {
                if kept[i] && (p[j] - 0.5).abs() <= (p[i] - 0.5).abs() {
                    assert!(kept[j]);
                }
            }
        }
    }

    #[test]
    fn covariates_constant_after_trimming_are_removed() {
        let x = Array2::from_shape_fn((6, 2), |(i, k)| if k == 0 { i as f64 } else { f64::from(u8::from(i == 5)) });
        let d = Dataset::from_parts(x, vec![0, 1, 0, 1, 0, 1], vec![0.0; 6], false).unwrap();
        let rows = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.01, 0.99];
        let s = ScoreMatrix::new(Array2::from_shape_vec((6, 2), rows.to_vec()).unwrap()).unwrap();
        let r = trim(&d, &s, false, &FitOptions::default()).unwrap();
        assert_eq!(r.mask.retained(), &[true, true, true, true, true, false]);
        assert_eq!(r.dropped_covariates, vec!["x2".to_string()]);
        assert_eq!(r.dataset.k(), 1);
    }

    #[test]
    fn mask_csv() {
        let mut out = Vec::new();
        write_mask_csv(&UnitMask::new(vec![true, false]), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "unit,retained\n1,1\n2,0\n");
    }
}
