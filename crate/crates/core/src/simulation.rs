//! Simulation designs, Monte Carlo replication and bias/RMSE/coverage
//! scoring.
//!
//! Both built-in designs share the covariate law
//! `(X1,X2,X3) ~ N(0, Σ)` with variances (2,1,1) and covariances
//! (1,−1,−0.5), `X4 ~ U[−3,3]`, `X5 ~ χ²₁`, `X6 ~ Bernoulli(0.5)`, and the
//! intercept `X0 = 1`. Treatment is multinomial logit in `X` with the design's
//! `β`, and `Y = Xᵀγ_W + η` with `η ~ N(0, σ²)`.

use std::sync::OnceLock;

use ndarray::{array, Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{max_normalized_weights, pairs, Method};
use crate::gps::{softmax_scores, ScoreMatrix};
use crate::linalg;
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::rng::{derive_seed, stream_rng};

/// Columns of the design matrix: intercept plus six covariates.
pub const DESIGN_DIM: usize = 7;
/// Draw cap per unit of total quota.
pub const DRAW_CAP_FACTOR: usize = 100;
/// Share of failed replicates above which an estimator is flagged.
pub const UNRELIABLE_SHARE: f64 = 0.05;

const COVARIATE_NAMES: [&str; 6] = ["X1", "X2", "X3", "X4", "X5", "X6"];

/// `E[X]` under the shared covariate law.
pub const COVARIATE_MEAN: [f64; DESIGN_DIM] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5];

fn normal_factor() -> &'static Array2<f64> {
    static L: OnceLock<Array2<f64>> = OnceLock::new();
    L.get_or_init(|| {
        let sigma = array![[2.0, 1.0, -1.0], [1.0, 1.0, -0.5], [-1.0, -0.5, 1.0]];
        linalg::cholesky(&sigma).expect("covariance is positive definite")
    })
}

/// One draw of `(1, X1, …, X6)`.
pub fn draw_covariates<R: Rng>(rng: &mut R) -> [f64; DESIGN_DIM] {
    let l = normal_factor();
    let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let mut x = [0.0; DESIGN_DIM];
    x[0] = 1.0;
    for r in 0..3 {
        x[1 + r] = (0..=r).map(|c| l[[r, c]] * z[c]).sum();
    }
    x[4] = rng.gen_range(-3.0..3.0);
    let e: f64 = rng.sample(StandardNormal);
    x[5] = e * e;
    x[6] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    x
}

/// How arm sizes are realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Allocation {
    /// Draws are accepted until every arm holds exactly its target size;
    /// draws landing in a full arm are discarded.
    Quota,
    /// `total` independent draws; arm sizes are random.
    Multinomial { total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub name: String,
    /// `T × 7`; the first row is zero in the built-in designs.
    pub beta: Array2<f64>,
    /// `T × 7` outcome coefficients.
    pub gamma: Array2<f64>,
    pub noise_sd: f64,
    pub arm_sizes: Vec<usize>,
    pub allocation: Allocation,
}

fn scaled(c: f64, v: [f64; DESIGN_DIM]) -> [f64; DESIGN_DIM] {
    v.map(|x| c * x)
}

fn rows(r: &[[f64; DESIGN_DIM]]) -> Array2<f64> {
    Array2::from_shape_fn((r.len(), DESIGN_DIM), |(i, j)| r[i][j])
}

impl SimulationDesign {
    /// Three levels, 500 units per arm.
    pub fn design1() -> Self {
        Self {
            name: "design1".into(),
            beta: rows(&[
                [0.0; DESIGN_DIM],
                scaled(0.7, [0.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0]),
                scaled(0.4, [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
            ]),
            gamma: rows(&[
                [-1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                [-3.0, 2.0, 3.0, 1.0, 2.0, 2.0, 2.0],
                [1.5, 3.0, 1.0, 2.0, -1.0, -1.0, -1.0],
            ]),
            noise_sd: 1.0,
            arm_sizes: vec![500; 3],
            allocation: Allocation::Quota,
        }
    }

    /// Six levels, 1000 units per arm.
    pub fn design2() -> Self {
        Self {
            name: "design2".into(),
            beta: rows(&[
                [0.0; DESIGN_DIM],
                scaled(0.4, [0.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0]),
                scaled(0.6, [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, -5.0]),
                scaled(0.8, [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0]),
                scaled(1.0, [0.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0]),
                scaled(1.2, [0.0, 1.0, 1.0, 1.0, -2.0, -1.0, 1.0]),
            ]),
            gamma: rows(&[
                [-1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                [-3.0, 2.0, 3.0, 1.0, 2.0, 2.0, 2.0],
                [3.0, 3.0, 1.0, 2.0, -1.0, -1.0, -4.0],
                [2.5, 4.0, 1.0, 2.0, -1.0, -1.0, -3.0],
                [2.0, 5.0, 1.0, 2.0, -1.0, -1.0, -2.0],
                [1.5, 6.0, 1.0, 2.0, -1.0, -1.0, -1.0],
            ]),
            noise_sd: 1.0,
            arm_sizes: vec![1000; 6],
            allocation: Allocation::Quota,
        }
    }

    pub fn custom(
        beta: Array2<f64>,
        gamma: Array2<f64>,
        noise_sd: f64,
        arm_sizes: Vec<usize>,
        allocation: Allocation,
    ) -> Result<Self> {
        let d = Self {
            name: "custom".into(),
            beta,
            gamma,
            noise_sd,
            arm_sizes,
            allocation,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "design1" => Ok(Self::design1()),
            "design2" => Ok(Self::design2()),
            other => Err(Error::Config(format!(
                "unknown design `{other}` (expected design1 or design2)"
            ))),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.beta.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.beta.nrows();
        if t < 2 {
            return Err(Error::Config("a design needs at least two levels".into()));
        }
        if self.beta.ncols() != DESIGN_DIM || self.gamma.ncols() != DESIGN_DIM || self.gamma.nrows() != t {
            return Err(Error::Config(format!(
                "β and γ must both be {t} × {DESIGN_DIM}, got {:?} and {:?}",
                self.beta.dim(),
                self.gamma.dim()
            )));
        }
        if self.arm_sizes.len() != t {
            return Err(Error::Config(format!("{} arm sizes for {t} levels", self.arm_sizes.len())));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise SD {} is invalid", self.noise_sd)));
        }
        if self.beta.iter().chain(self.gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("design coefficients must be finite".into()));
        }
        match self.allocation {
            Allocation::Quota if self.arm_sizes.contains(&0) => {
                Err(Error::Config("every arm quota must be positive".into()))
            }
            Allocation::Multinomial { total: 0 } => {
                Err(Error::Config("multinomial allocation needs a positive total".into()))
            }
            _ => Ok(()),
        }
    }

    /// `p(w|x)` for one covariate row.
    fn probabilities(&self, x: &[f64; DESIGN_DIM], out: &mut [f64]) {
        let mut mx = f64::NEG_INFINITY;
        for (w, o) in out.iter_mut().enumerate() {
            *o = self.beta.row(w).iter().zip(x).map(|(b, v)| b * v).sum();
            mx = mx.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - mx).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    fn outcome_mean(&self, x: &[f64; DESIGN_DIM], w: usize) -> f64 {
        self.gamma.row(w).iter().zip(x).map(|(g, v)| g * v).sum()
    }
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (w, &pw) in p.iter().enumerate() {
        acc += pw;
        if u < acc {
            return w;
        }
    }
    p.len() - 1
}

/// Draws one dataset. Covariates exclude the intercept; outcomes use the
/// design's γ with Gaussian noise. Row order is shuffled.
pub fn generate(design: &SimulationDesign, seed: u64) -> Result<Dataset> {
    design.validate()?;
    let t = design.n_levels();
    let mut rng = stream_rng(seed, 0);
    let mut units: Vec<([f64; DESIGN_DIM], usize)> = Vec::new();
    let mut p = vec![0.0; t];
    match design.allocation {
        Allocation::Quota => {
            let total: usize = design.arm_sizes.iter().sum();
            let cap = DRAW_CAP_FACTOR * total;
            let mut filled = vec![0usize; t];
            let mut draws = 0;
            units.reserve(total);
            while units.len() < total {
                if draws == cap {
                    return Err(Error::GenerationCap(cap));
                }
                draws += 1;
                let x = draw_covariates(&mut rng);
                design.probabilities(&x, &mut p);
                let w = categorical(&p, rng.gen());
                if filled[w] < design.arm_sizes[w] {
                    filled[w] += 1;
                    units.push((x, w));
                }
            }
        }
        Allocation::Multinomial { total } => {
            for _ in 0..total {
                let x = draw_covariates(&mut rng);
                design.probabilities(&x, &mut p);
                units.push((x, categorical(&p, rng.gen())));
            }
        }
    }
    units.shuffle(&mut rng);
    let n = units.len();
    let cov = Array2::from_shape_fn((n, DESIGN_DIM - 1), |(i, j)| units[i].0[j + 1]);
    let treatment: Vec<usize> = units.iter().map(|u| u.1).collect();
    let outcome: Vec<f64> = units
        .iter()
        .map(|(x, w)| {
            let eta: f64 = rng.sample(StandardNormal);
            design.outcome_mean(x, *w) + design.noise_sd * eta
        })
        .collect();
    let names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let labels = (1..=t).map(|w| w.to_string()).collect();
    Dataset::new(cov, treatment, outcome, names, false, labels)
}

/// Scores implied by the design's β for the units of `d`.
pub fn true_scores(design: &SimulationDesign, d: &Dataset) -> Result<ScoreMatrix> {
    if d.n_levels() != design.n_levels() || d.design_matrix().ncols() != DESIGN_DIM {
        return Err(Error::Dimension("dataset does not come from this design".into()));
    }
    Ok(softmax_scores(d.design_matrix().view(), design.beta.view()))
}

/// Effects `τ(w,w′) = μᵀ(γ_{w′} − γ_w)` for a covariate mean `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub n_levels: usize,
    /// `μᵀγ_w` for each level.
    pub level_means: Vec<f64>,
}

impl TrueEffects {
    pub fn at_mean(design: &SimulationDesign, mean: ArrayView1<'_, f64>) -> Self {
        Self {
            n_levels: design.n_levels(),
            level_means: design.gamma.rows().into_iter().map(|g| g.dot(&mean)).collect(),
        }
    }

    /// Superpopulation effects at `E[X]`.
    pub fn closed_form(design: &SimulationDesign) -> Self {
        Self::at_mean(design, Array1::from(COVARIATE_MEAN.to_vec()).view())
    }

    pub fn tau(&self, w: usize, w_prime: usize) -> f64 {
        self.level_means[w_prime] - self.level_means[w]
    }

    /// Effects aligned with `pairs(T)`.
    pub fn pair_effects(&self) -> Vec<f64> {
        pairs(self.n_levels).into_iter().map(|(w, v)| self.tau(w, v)).collect()
    }
}

/// `E[X | W = w]` for every level, by importance-weighting covariate draws
/// with the true scores. Deterministic in `seed`.
pub fn conditional_covariate_means(design: &SimulationDesign, draws: usize, seed: u64) -> Array2<f64> {
    let t = design.n_levels();
    let mut rng = stream_rng(seed, 0);
    let mut num = Array2::<f64>::zeros((t, DESIGN_DIM));
    let mut den = vec![0.0; t];
    let mut p = vec![0.0; t];
    for _ in 0..draws {
        let x = draw_covariates(&mut rng);
        design.probabilities(&x, &mut p);
        for w in 0..t {
            den[w] += p[w];
            for j in 0..DESIGN_DIM {
                num[[w, j]] += p[w] * x[j];
            }
        }
    }
    for w in 0..t {
        num.row_mut(w).mapv_inplace(|v| v / den[w]);
    }
    num
}

/// Which estimand simulated estimates are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMode {
    /// `E[X]ᵀΔγ` under the covariate law.
    Superpopulation,
    /// The population the design samples from: arms mixed in their target
    /// proportions, `Σ_w (N_w/N) E[X|W=w]ᵀΔγ`. Equals the superpopulation
    /// effect under multinomial allocation.
    #[default]
    ArmMixture,
    /// Per replicate, `X̄ᵀΔγ` over the generated sample.
    Sample,
}

/// Draws used for the arm-mixture covariate mean.
pub const MIXTURE_DRAWS: usize = 2_000_000;
const MIXTURE_SEED: u64 = 0x7275_7468;

/// Covariate mean of the population targeted by `mode` (not defined for
/// [`TruthMode::Sample`], which varies by replicate).
pub fn target_covariate_mean(design: &SimulationDesign, mode: TruthMode) -> Option<Array1<f64>> {
    match (mode, &design.allocation) {
        (TruthMode::Sample, _) => None,
        (TruthMode::Superpopulation, _) | (TruthMode::ArmMixture, Allocation::Multinomial { .. }) => {
            Some(Array1::from(COVARIATE_MEAN.to_vec()))
        }
        (TruthMode::ArmMixture, Allocation::Quota) => {
            let cond = conditional_covariate_means(design, MIXTURE_DRAWS, MIXTURE_SEED);
            let total: usize = design.arm_sizes.iter().sum();
            let mut mu = Array1::zeros(DESIGN_DIM);
            for (w, &n) in design.arm_sizes.iter().enumerate() {
                mu.scaled_add(n as f64 / total as f64, &cond.row(w));
            }
            Some(mu)
        }
    }
}

/// One replicate's estimate of one contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub tau_hat: f64,
    pub truth: f64,
    pub ci: Option<(f64, f64)>,
}

/// Scores of one (estimator, contrast) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    /// 1-based levels.
    pub w: usize,
    pub w_prime: usize,
    /// Mean truth over the scored replicates.
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Variance of the estimates (divisor R).
    pub variance: f64,
    pub coverage: Option<f64>,
    pub replicates: usize,
}

/// Bias, RMSE, variance and coverage over replicates.
pub fn score_cell(method: Method, pair: (usize, usize), estimates: &[ReplicateEstimate]) -> CellSummary {
    let r = estimates.len() as f64;
    let errors: Vec<f64> = estimates.iter().map(|e| e.tau_hat - e.truth).collect();
    let bias = errors.iter().sum::<f64>() / r;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / r;
    let variance = errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / r;
    let with_ci: Vec<_> = estimates.iter().filter_map(|e| e.ci.map(|c| (c, e.truth))).collect();
    let coverage = if with_ci.is_empty() {
        None
    } else {
        let hit = with_ci.iter().filter(|((lo, hi), t)| lo <= t && t <= hi).count();
        Some(hit as f64 / with_ci.len() as f64)
    };
    CellSummary {
        method,
        w: pair.0 + 1,
        w_prime: pair.1 + 1,
        truth: estimates.iter().map(|e| e.truth).sum::<f64>() / r,
        bias,
        rmse: mse.sqrt(),
        variance,
        coverage,
        replicates: estimates.len(),
    }
}

/// Per-estimator failure bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStatus {
    pub method: Method,
    pub failed: usize,
    pub unreliable: bool,
    /// First failure message, if any.
    pub example_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub design: String,
    pub reps: usize,
    pub seed: u64,
    pub truth_mode: TruthMode,
    pub methods: Vec<MethodStatus>,
    /// Estimator-major, contrasts in `pairs(T)` order.
    pub cells: Vec<CellSummary>,
}

impl MonteCarloSummary {
    pub fn cell(&self, method: Method, w: usize, w_prime: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.w == w + 1 && c.w_prime == w_prime + 1)
    }

    pub fn cells_for(&self, method: Method) -> Vec<&CellSummary> {
        self.cells.iter().filter(|c| c.method == method).collect()
    }

    /// Table layout: one row per estimator; bias, RMSE and coverage column
    /// groups, one column per contrast inside each group.
    pub fn write_table_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let contrasts: Vec<(usize, usize)> = {
            let mut seen = Vec::new();
            for c in &self.cells {
                if !seen.contains(&(c.w, c.w_prime)) {
                    seen.push((c.w, c.w_prime));
                }
            }
            seen
        };
        let mut header = vec!["estimator".to_string()];
        for stat in ["bias", "rmse", "coverage"] {
            for (w, v) in &contrasts {
                header.push(format!("{stat}_{w}_{v}"));
            }
        }
        header.push("failed".into());
        wtr.write_record(&header)?;
        for status in &self.methods {
            let cells = self.cells_for(status.method);
            let mut row = vec![status.method.tag().to_string()];
            for c in &cells {
                row.push(format!("{:.4}", c.bias));
            }
            for c in &cells {
                row.push(format!("{:.4}", c.rmse));
            }
            for c in &cells {
                row.push(c.coverage.map_or_else(String::new, |v| format!("{v:.4}")));
            }
            if cells.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), 3 * contrasts.len()));
            }
            row.push(status.failed.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub truth: TruthMode,
    /// Estimators and interval settings run on every replicate; its `seed`
    /// is replaced by a per-replicate stream.
    pub pipeline: PipelineConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            reps: 1000,
            seed: 0,
            workers: 0,
            truth: TruthMode::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Everything recorded about one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    /// Per requested method: estimates aligned with `pairs(T)`, or the
    /// failure message.
    pub results: Vec<std::result::Result<Vec<ReplicateEstimate>, String>>,
    /// Largest within-arm normalized Hájek weight per arm on the estimated
    /// scores, when scores were fitted.
    pub max_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub replicates: Vec<ReplicateRecord>,
}

fn run_replicate(
    design: &SimulationDesign,
    cfg: &MonteCarloConfig,
    fixed_truth: Option<&[f64]>,
    index: usize,
) -> ReplicateRecord {
    let methods = &cfg.pipeline.methods;
    let data_seed = derive_seed(cfg.seed, 2 * index as u64);
    let fail_all = |msg: String| ReplicateRecord {
        index,
        results: vec![Err(msg); methods.len()],
        max_weights: None,
    };
    let d = match generate(design, data_seed) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let truth: Vec<f64> = match fixed_truth {
        Some(t) => t.to_vec(),
        None => {
            let x = d.design_matrix();
            let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty sample");
            TrueEffects::at_mean(design, mean.view()).pair_effects()
        }
    };
    let pipe = PipelineConfig {
        seed: derive_seed(cfg.seed, 2 * index as u64 + 1),
        ..cfg.pipeline.clone()
    };
    let out = match run_pipeline(&d, &pipe) {
        Ok(o) => o,
        Err(e) => return fail_all(e.to_string()),
    };
    let max_weights = out
        .scores
        .as_ref()
        .and_then(|s| max_normalized_weights(&d, s).ok());
    let results = out
        .outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(est) => Ok(est
                .iter()
                .zip(&truth)
                .map(|(e, &t)| ReplicateEstimate {
                    tau_hat: e.tau_hat,
                    truth: t,
                    ci: e.ci_lo.zip(e.ci_hi),
                })
                .collect()),
            Err(f) => Err(format!("{}: {}", f.module, f.message)),
        })
        .collect();
    ReplicateRecord {
        index,
        results,
        max_weights,
    }
}

/// Aggregates replicate records into a summary. Failed replicates are
/// excluded per estimator and counted.
pub fn score_summary(
    design: &SimulationDesign,
    cfg: &MonteCarloConfig,
    replicates: &[ReplicateRecord],
) -> MonteCarloSummary {
    let t = design.n_levels();
    let contrasts = pairs(t);
    let mut methods = Vec::new();
    let mut cells = Vec::new();
    for (k, &method) in cfg.pipeline.methods.iter().enumerate() {
        let ok: Vec<&Vec<ReplicateEstimate>> = replicates.iter().filter_map(|r| r.results[k].as_ref().ok()).collect();
        let failed = replicates.len() - ok.len();
        let example_failure = replicates.iter().find_map(|r| r.results[k].as_ref().err().cloned());
        methods.push(MethodStatus {
            method,
            failed,
            unreliable: failed as f64 > UNRELIABLE_SHARE * replicates.len() as f64,
            example_failure,
        });
        if ok.is_empty() {
            continue;
        }
        for (p, &pair) in contrasts.iter().enumerate() {
            let col: Vec<ReplicateEstimate> = ok.iter().map(|r| r[p]).collect();
            cells.push(score_cell(method, pair, &col));
        }
    }
    MonteCarloSummary {
        design: design.name.clone(),
        reps: replicates.len(),
        seed: cfg.seed,
        truth_mode: cfg.truth,
        methods,
        cells,
    }
}

/// Runs `cfg.reps` replicates on a pool of `cfg.workers` threads. Replicate
/// `r` draws its data and bootstrap streams from `(cfg.seed, r)`, so the
/// result does not depend on scheduling.
pub fn run_monte_carlo(design: &SimulationDesign, cfg: &MonteCarloConfig) -> Result<MonteCarloRun> {
    design.validate()?;
    if cfg.reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    cfg.pipeline.validate()?;
    let fixed_truth = target_covariate_mean(design, cfg.truth)
        .map(|mu| TrueEffects::at_mean(design, mu.view()).pair_effects());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let replicates: Vec<ReplicateRecord> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|r| run_replicate(design, cfg, fixed_truth.as_deref(), r))
            .collect()
    });
    let summary = score_summary(design, cfg, &replicates);
    Ok(MonteCarloRun { summary, replicates })
}
