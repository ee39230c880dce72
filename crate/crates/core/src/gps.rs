//! Generalized propensity score: multinomial logistic regression fitted by
//! Newton–Raphson with step-halving, and per-unit score matrices.
//!
//! Levels are `0..T`; the last level is the reference category and its
//! coefficient row is identically zero (never stored).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

const SEPARATION_NORM: f64 = 1e4;
const SEPARATION_STEP: f64 = 1e-3;
const LL_NOISE: f64 = 1e-13;
const REL_LOGLIK_TOL: f64 = 1e-12;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the score (gradient).
    pub tol: f64,
    /// Penalty `(ridge/2)·‖β‖²`; zero disables it.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            ridge: 0.0,
        }
    }
}

/// Fitted multinomial-logit model for `p(w|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsModel {
    #[serde(rename = "T")]
    n_levels: usize,
    #[serde(rename = "K")]
    n_coef: usize,
    covariate_names: Vec<String>,
    /// Row-major `(T-1) × K`.
    coefficients: Vec<f64>,
    converged: bool,
    #[serde(default)]
    iterations: usize,
    log_likelihood: f64,
    #[serde(default)]
    gradient_norm: f64,
}

impl GpsModel {
    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Max-norm of the (penalized) score at the returned coefficients.
    pub fn gradient_norm(&self) -> f64 {
        self.gradient_norm
    }

    /// `(T-1) × K` coefficient matrix.
    pub fn coefficients(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n_levels - 1, self.n_coef), self.coefficients.clone())
            .expect("shape checked at construction")
    }

    /// `T × K` coefficients including the zero reference row.
    pub fn full_coefficients(&self) -> Array2<f64> {
        let mut full = Array2::zeros((self.n_levels, self.n_coef));
        full.slice_mut(ndarray::s![..self.n_levels - 1, ..])
            .assign(&self.coefficients());
        full
    }

    pub fn coefficient_slice(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn predict_scores(&self, d: &Dataset) -> Result<ScoreMatrix> {
        let x = d.design_matrix();
        if x.ncols() != self.n_coef {
            return Err(Error::Dimension(format!(
                "model has {} coefficients per level, dataset design has {} columns",
                self.n_coef,
                x.ncols()
            )));
        }
        Ok(softmax_scores(x.view(), self.full_coefficients().view()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GpsModel = serde_json::from_str(s)?;
        if m.n_levels < 2 || m.coefficients.len() != (m.n_levels - 1) * m.n_coef {
            return Err(Error::Dimension(format!(
                "model JSON declares T={}, K={} but holds {} coefficients",
                m.n_levels,
                m.n_coef,
                m.coefficients.len()
            )));
        }
        Ok(m)
    }
}

/// `N × T` matrix of `p(w|X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
}

impl ScoreMatrix {
    /// Validates that entries lie in `[0, 1]` and rows sum to one (within 1e-9).
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.ncols() < 2 {
            return Err(Error::Dimension("score matrix needs at least two levels".into()));
        }
        for (i, row) in scores.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidData(format!("scores of unit {i} outside [0,1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidData(format!("scores of unit {i} sum to {s}")));
            }
        }
        Ok(Self { scores })
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_levels(&self) -> usize {
        self.scores.ncols()
    }

    pub fn get(&self, i: usize, w: usize) -> f64 {
        self.scores[[i, w]]
    }

    pub fn column(&self, w: usize) -> ArrayView1<'_, f64> {
        self.scores.column(w)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    /// First `T-1` columns: the score vector used by vector matching.
    pub fn leading_columns(&self) -> ArrayView2<'_, f64> {
        self.scores.slice(ndarray::s![.., ..self.n_levels() - 1])
    }

    /// Rows `indices`.
    pub fn select(&self, indices: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            scores: self.scores.select(ndarray::Axis(0), indices),
        }
    }

    pub(crate) fn check_matches(&self, d: &Dataset) -> Result<()> {
        if self.n() != d.n() || self.n_levels() != d.n_levels() {
            return Err(Error::Dimension(format!(
                "score matrix is {}×{}, dataset has N={} and T={}",
                self.n(),
                self.n_levels(),
                d.n(),
                d.n_levels()
            )));
        }
        Ok(())
    }
}

/// Row-wise softmax of `X βᵀ` for a `T × K` coefficient matrix, with
/// max-subtraction.
pub fn softmax_scores(x: ArrayView2<'_, f64>, beta: ArrayView2<'_, f64>) -> ScoreMatrix {
    let n = x.nrows();
    let t = beta.nrows();
    let mut scores = Array2::zeros((n, t));
    let mut eta = vec![0.0; t];
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (w, b) in beta.rows().into_iter().enumerate() {
            eta[w] = xi.dot(&b);
        }
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for e in eta.iter_mut() {
            *e = (*e - m).exp();
            total += *e;
        }
        for w in 0..t {
            scores[[i, w]] = eta[w] / total;
        }
    }
    ScoreMatrix { scores }
}

pub fn fit_multinomial_logit(d: &Dataset, opts: &FitOptions) -> Result<GpsModel> {
    fit_multinomial_logit_from(d, opts, None)
}

/// As [`fit_multinomial_logit`], starting Newton from `init` (row-major
/// `(T-1) × K`) when given.
pub fn fit_multinomial_logit_from(
    d: &Dataset,
    opts: &FitOptions,
    init: Option<&[f64]>,
) -> Result<GpsModel> {
    let x = d.design_matrix();
    let t = d.n_levels();
    if t < 2 {
        return Err(Error::InvalidData("need at least two treatment levels".into()));
    }
    let p = (t - 1) * x.ncols();
    if d.n() <= p {
        log::warn!(
            "N = {} does not exceed the {} logit parameters; estimates may be unstable",
            d.n(),
            p
        );
    }
    let fit = LogitProblem::new(x.view(), d.treatment(), t, opts.ridge).newton(opts, init)?;
    if !fit.converged {
        log::warn!(
            "logit stopped at the numerical floor with gradient max-norm {:.3e}",
            fit.gradient_norm
        );
    }
    Ok(GpsModel {
        n_levels: t,
        n_coef: x.ncols(),
        covariate_names: d.design_names(),
        coefficients: fit.coef,
        converged: fit.converged,
        iterations: fit.iterations,
        log_likelihood: fit.log_likelihood,
        gradient_norm: fit.gradient_norm,
    })
}

/// Penalized multinomial log-likelihood at `coef` (row-major `(T-1) × K`).
pub fn log_likelihood<'a>(
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_levels: usize,
    coef: &[f64],
    ridge: f64,
) -> f64 {
    let prob = LogitProblem::new(x, y, n_levels, ridge);
    let mut probs = vec![0.0; y.len() * (n_levels - 1)];
    prob.evaluate(coef, &mut probs)
}

/// Analytic gradient of [`log_likelihood`].
pub fn log_likelihood_gradient<'a>(
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_levels: usize,
    coef: &[f64],
    ridge: f64,
) -> Vec<f64> {
    let prob = LogitProblem::new(x, y, n_levels, ridge);
    let mut probs = vec![0.0; y.len() * (n_levels - 1)];
    prob.evaluate(coef, &mut probs);
    prob.gradient(coef, &probs)
}

struct LogitFit {
    coef: Vec<f64>,
    iterations: usize,
    log_likelihood: f64,
    gradient_norm: f64,
    converged: bool,
}

struct LogitProblem<'a> {
    x: ndarray::CowArray<'a, f64, ndarray::Ix2>,
    y: &'a [usize],
    /// Number of non-reference levels.
    m: usize,
    k: usize,
    ridge: f64,
}

impl<'a> LogitProblem<'a> {
    fn new(x: ArrayView2<'a, f64>, y: &'a [usize], n_levels: usize, ridge: f64) -> Self {
        let k = x.ncols();
        let x = if x.is_standard_layout() {
            ndarray::CowArray::from(x)
        } else {
            ndarray::CowArray::from(x.as_standard_layout().into_owned())
        };
        Self {
            x,
            y,
            m: n_levels - 1,
            k,
            ridge,
        }
    }

    fn xs(&self) -> &[f64] {
        self.x.as_slice().expect("standard layout")
    }

    /// Log-likelihood; fills `probs` (N × m) with non-reference probabilities.
    fn evaluate(&self, coef: &[f64], probs: &mut [f64]) -> f64 {
        let (m, k) = (self.m, self.k);
        let beta = ArrayView2::from_shape((m, k), coef).expect("(T-1) × K coefficients");
        let eta = self.x.dot(&beta.t());
        let eta = eta.as_standard_layout();
        let es = eta.as_slice().expect("standard layout");
        let mut ll = 0.0;
        for (i, &yi) in self.y.iter().enumerate() {
            let row = &es[i * m..(i + 1) * m];
            let mx = row.iter().fold(0.0f64, |a, &e| a.max(e));
            let base = (-mx).exp();
            let pr = &mut probs[i * m..(i + 1) * m];
            let mut denom = base;
            for (p, &e) in pr.iter_mut().zip(row) {
                *p = (e - mx).exp();
                denom += *p;
            }
            let own = if yi < m { pr[yi] } else { base };
            for p in pr.iter_mut() {
                *p /= denom;
            }
            ll += (own / denom).ln();
        }
        if self.ridge > 0.0 {
            ll -= 0.5 * self.ridge * coef.iter().map(|b| b * b).sum::<f64>();
        }
        ll
    }

    fn gradient(&self, coef: &[f64], probs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut resid = Array2::from_shape_vec((self.y.len(), m), probs.to_vec()).expect("N × m");
        resid.mapv_inplace(|p| -p);
        for (i, &yi) in self.y.iter().enumerate() {
            if yi < m {
                resid[[i, yi]] += 1.0;
            }
        }
        // (m × N)(N × k), row-major matches the coefficient layout
        let mut g: Vec<f64> = resid.t().dot(&self.x).iter().copied().collect();
        if self.ridge > 0.0 {
            for (gj, b) in g.iter_mut().zip(coef) {
                *gj -= self.ridge * b;
            }
        }
        g
    }

    /// Fisher information (negative Hessian), `(m·k)²`. Block `(a,b)` is
    /// `Xᵀ diag(p_a(δ_ab − p_b)) X`.
    fn information(&self, probs: &[f64]) -> Array2<f64> {
        let (m, k) = (self.m, self.k);
        let n = self.y.len();
        let dim = m * k;
        let mut h = Array2::<f64>::zeros((dim, dim));
        let mut xw = Array2::<f64>::zeros((n, k));
        let xt = self.x.t();
        for a in 0..m {
            for b in a..m {
                let xs = self.xs();
                let ws = xw.as_slice_mut().expect("fresh array");
                for i in 0..n {
                    let pa = probs[i * m + a];
                    let wab = if a == b { pa * (1.0 - pa) } else { -pa * probs[i * m + b] };
                    for (r, x) in ws[i * k..(i + 1) * k].iter_mut().zip(&xs[i * k..(i + 1) * k]) {
                        *r = wab * x;
                    }
                }
                let block = xt.dot(&xw);
                h.slice_mut(ndarray::s![a * k..(a + 1) * k, b * k..(b + 1) * k]).assign(&block);
                if a != b {
                    h.slice_mut(ndarray::s![b * k..(b + 1) * k, a * k..(a + 1) * k])
                        .assign(&block.t());
                }
            }
        }
        for r in 0..dim {
            h[[r, r]] += self.ridge;
        }
        h
    }

    fn newton(&self, opts: &FitOptions, init: Option<&[f64]>) -> Result<LogitFit> {
        let dim = self.m * self.k;
        let n = self.y.len();
        let mut coef = match init {
            Some(c) if c.len() == dim => c.to_vec(),
            Some(c) => {
                return Err(Error::Dimension(format!(
                    "initial coefficients have length {}, expected {dim}",
                    c.len()
                )))
            }
            None => vec![0.0; dim],
        };
        let mut probs = vec![0.0; n * self.m];
        let mut ll = self.evaluate(&coef, &mut probs);
        let mut trial_probs = vec![0.0; n * self.m];
        let mut grad = self.gradient(&coef, &probs);
        let mut gnorm = max_norm(&grad);
        let mut stalled = false;
        let mut last_rel = f64::INFINITY;
        let mut last_step = 0.0f64;
        for iter in 0..=opts.max_iter {
            if gnorm < opts.tol || stalled {
                // A vanishing score with Newton steps that stay large means the
                // likelihood keeps rising along a direction: separated data.
                if self.ridge == 0.0 && last_step > SEPARATION_STEP {
                    let norm = coef.iter().map(|b| b * b).sum::<f64>().sqrt();
                    return Err(Error::Separation { norm });
                }
                return Ok(LogitFit {
                    coef,
                    iterations: iter,
                    log_likelihood: ll,
                    gradient_norm: gnorm,
                    converged: gnorm < opts.tol,
                });
            }
            if iter == opts.max_iter {
                break;
            }
            let info = self.information(&probs);
            let Some(chol) = linalg::cholesky(&info) else {
                return Err(self.degenerate(&coef, iter, gnorm));
            };
            let step = linalg::cholesky_solve(&chol, &Array1::from(grad.clone()));
            let mut scale = 1.0;
            let mut accepted = false;
            let mut trial = vec![0.0; dim];
            for _ in 0..MAX_HALVINGS {
                for j in 0..dim {
                    trial[j] = coef[j] + scale * step[j];
                }
                let trial_ll = self.evaluate(&trial, &mut trial_probs);
                // near the optimum the true gain drops below rounding noise
                let slack = LL_NOISE * ll.abs().max(1.0);
                if trial_ll.is_finite() && trial_ll >= ll - slack {
                    last_rel = (trial_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
                    last_step = scale * max_norm(step.as_slice().expect("contiguous"));
                    std::mem::swap(&mut coef, &mut trial);
                    std::mem::swap(&mut probs, &mut trial_probs);
                    ll = trial_ll;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                stalled = true;
            }
            if self.ridge == 0.0 {
                let norm = coef.iter().map(|b| b * b).sum::<f64>().sqrt();
                if norm > SEPARATION_NORM {
                    return Err(Error::Separation { norm });
                }
            }
            grad = self.gradient(&coef, &probs);
            let previous = gnorm;
            gnorm = max_norm(&grad);
            // Likelihood flat to 1e-12 and the score no longer shrinking: the
            // floating-point floor has been reached.
            if last_rel < REL_LOGLIK_TOL && gnorm > 0.5 * previous {
                stalled = true;
            }
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            gradient_norm: gnorm,
            coefficients: coef,
        })
    }

    fn degenerate(&self, coef: &[f64], iter: usize, gnorm: f64) -> Error {
        let norm = coef.iter().map(|b| b * b).sum::<f64>().sqrt();
        if self.ridge == 0.0 && norm > 50.0 {
            Error::Separation { norm }
        } else if iter == 0 {
            Error::SingularMatrix("logit information matrix (collinear design columns)".into())
        } else {
            Error::NonConvergence {
                iterations: iter,
                gradient_norm: gnorm,
                coefficients: coef.to_vec(),
            }
        }
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
