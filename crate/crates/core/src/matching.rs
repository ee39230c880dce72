//! Single nearest-neighbour matching with replacement.
//!
//! Three matching variables are supported: a scalar score (absolute
//! difference), a score vector (Euclidean) and the covariates themselves
//! (Mahalanobis, implemented by Cholesky whitening). For every query the
//! donor pool is the set of units with the target treatment level, the unit
//! itself included, so a unit always matches itself within its own arm.
//! Remaining ties go to the smallest donor index.

use ndarray::{Array2, ArrayView2};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kdtree::{squared_distance, KdTree};
use crate::linalg;

/// Above this dimension vector queries fall back to a linear scan.
const KD_MAX_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    ScalarAbsolute,
    VectorEuclidean,
    /// Covariance matrix `V`; distance `√((x−x′)ᵀ V⁻¹ (x−x′))`.
    Mahalanobis(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSpec {
    pub target_level: usize,
    pub metric: Metric,
}

impl MatchSpec {
    pub fn new(target_level: usize, metric: Metric) -> Result<Self> {
        if let Metric::Mahalanobis(v) = &metric {
            check_symmetric(v)?;
            linalg::cholesky(v)
                .ok_or_else(|| Error::SingularMatrix("Mahalanobis matrix is not positive definite".into()))?;
        }
        Ok(Self { target_level, metric })
    }
}

/// Matches of every query unit into one target arm.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchColumn {
    pub level: usize,
    /// `donors[i]` is the matched unit for query `i`.
    pub donors: Vec<usize>,
    pub distances: Vec<f64>,
}

impl MatchColumn {
    /// Times each unit serves as a match for some other unit.
    pub fn reuse_counts(&self, n: usize) -> Vec<usize> {
        let mut k = vec![0; n];
        for (i, &j) in self.donors.iter().enumerate() {
            if i != j {
                k[j] += 1;
            }
        }
        k
    }
}

/// Sample covariance of the non-intercept covariates with divisor `N`.
pub fn mahalanobis_matrix(d: &Dataset) -> Result<Array2<f64>> {
    let x = d.substantive_covariates();
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidData("Mahalanobis matrix needs N >= 2".into()));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidData("no covariates besides the intercept".into()));
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let v = centered.t().dot(&centered) / n as f64;
    if linalg::cholesky(&v).is_none() {
        return Err(Error::SingularMatrix(
            "covariate covariance matrix is singular".into(),
        ));
    }
    Ok(v)
}

/// Rows of `x` mapped to `L⁻¹ x` where `V = L Lᵀ`, so that Euclidean distance
/// between whitened rows equals Mahalanobis distance between the originals.
pub fn whiten(x: ArrayView2<'_, f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if v.nrows() != x.ncols() || v.ncols() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{}×{} Mahalanobis matrix for {} covariates",
            v.nrows(),
            v.ncols(),
            x.ncols()
        )));
    }
    check_symmetric(v)?;
    let l = linalg::cholesky(v)
        .ok_or_else(|| Error::SingularMatrix("Mahalanobis matrix is not positive definite".into()))?;
    let mut z = x.as_standard_layout().into_owned();
    for mut row in z.rows_mut() {
        let r = row.as_slice_mut().expect("standard layout");
        linalg::forward_substitute(&l, r);
    }
    Ok(z)
}

fn check_symmetric(v: &Array2<f64>) -> Result<()> {
    let n = v.nrows();
    if v.ncols() != n {
        return Err(Error::Dimension("Mahalanobis matrix is not square".into()));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (v[[i, j]], v[[j, i]]);
            if (a - b).abs() > 1e-12 * (a.abs() + b.abs()).max(1.0) {
                return Err(Error::InvalidData("Mahalanobis matrix is not symmetric".into()));
            }
        }
    }
    Ok(())
}

fn check_lengths(n_query: usize, n_donor: usize, n_treat: usize) -> Result<()> {
    if n_query != n_donor || n_donor != n_treat {
        return Err(Error::Dimension(format!(
            "{n_query} queries, {n_donor} donor values, {n_treat} treatment labels"
        )));
    }
    Ok(())
}

/// Distinct donor values in ascending order, each with the smallest index
/// attaining it.
struct SortedDonors {
    values: Vec<f64>,
    first_index: Vec<usize>,
}

impl SortedDonors {
    fn new(donor_values: &[f64], members: impl Iterator<Item = usize>) -> Self {
        let mut pairs: Vec<(f64, usize)> = members.map(|j| (donor_values[j], j)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut values = Vec::with_capacity(pairs.len());
        let mut first_index: Vec<usize> = Vec::with_capacity(pairs.len());
        for (v, j) in pairs {
            // -0.0 and 0.0 sort apart but compare equal
            if values.last() == Some(&v) {
                let last = first_index.last_mut().expect("non-empty");
                *last = (*last).min(j);
            } else {
                values.push(v);
                first_index.push(j);
            }
        }
        Self { values, first_index }
    }

    fn nearest(&self, q: f64) -> (usize, f64) {
        let n = self.values.len();
        let p = self.values.partition_point(|&v| v <= q);
        let dist = |s: usize| (self.values[s] - q).abs();
        let mut best = f64::INFINITY;
        if p > 0 {
            best = dist(p - 1);
        }
        if p < n {
            best = best.min(dist(p));
        }
        // Distances are monotone on each side of q, so every minimiser sits in
        // a contiguous block around p.
        let mut idx = usize::MAX;
        let mut s = p;
        while s > 0 && dist(s - 1) == best {
            idx = idx.min(self.first_index[s - 1]);
            s -= 1;
        }
        let mut s = p;
        while s < n && dist(s) == best {
            idx = idx.min(self.first_index[s]);
            s += 1;
        }
        (idx, best)
    }
}

/// For each query `i`, the unit `j` with `treatment[j] == w` minimising
/// `|donor_values[j] − query_values[i]|`.
pub fn match_scalar(
    query_values: &[f64],
    donor_values: &[f64],
    treatment: &[usize],
    w: usize,
) -> Result<MatchColumn> {
    check_lengths(query_values.len(), donor_values.len(), treatment.len())?;
    let pool = SortedDonors::new(donor_values, (0..treatment.len()).filter(|&j| treatment[j] == w));
    if pool.values.is_empty() {
        return Err(Error::EmptyDonorPool { level: w + 1 });
    }
    let mut donors = Vec::with_capacity(query_values.len());
    let mut distances = Vec::with_capacity(query_values.len());
    for (i, &q) in query_values.iter().enumerate() {
        if treatment[i] == w && donor_values[i] == q {
            donors.push(i);
            distances.push(0.0);
            continue;
        }
        let (j, d) = pool.nearest(q);
        donors.push(j);
        distances.push(d);
    }
    Ok(MatchColumn { level: w, donors, distances })
}

/// Euclidean nearest neighbour on score vectors (or any row vectors).
pub fn match_vector(
    query_rows: ArrayView2<'_, f64>,
    donor_rows: ArrayView2<'_, f64>,
    treatment: &[usize],
    w: usize,
) -> Result<MatchColumn> {
    check_lengths(query_rows.nrows(), donor_rows.nrows(), treatment.len())?;
    if query_rows.ncols() != donor_rows.ncols() {
        return Err(Error::Dimension(format!(
            "query rows have {} columns, donor rows {}",
            query_rows.ncols(),
            donor_rows.ncols()
        )));
    }
    let dim = donor_rows.ncols();
    let members: Vec<usize> = (0..treatment.len()).filter(|&j| treatment[j] == w).collect();
    if members.is_empty() {
        return Err(Error::EmptyDonorPool { level: w + 1 });
    }
    let donors_std = donor_rows.as_standard_layout();
    let points = donors_std.as_slice().expect("standard layout");
    let queries_std = query_rows.as_standard_layout();
    let qs = queries_std.as_slice().expect("standard layout");
    let tree = (dim > 0 && dim <= KD_MAX_DIM).then(|| KdTree::new(points, dim, members.clone()));

    let mut donors = Vec::with_capacity(treatment.len());
    let mut distances = Vec::with_capacity(treatment.len());
    for i in 0..treatment.len() {
        let q = &qs[i * dim..(i + 1) * dim];
        if treatment[i] == w && squared_distance(q, &points[i * dim..(i + 1) * dim]) == 0.0 {
            donors.push(i);
            distances.push(0.0);
            continue;
        }
        let (j, d2) = match &tree {
            Some(t) => t.nearest(q, None).expect("non-empty pool"),
            None => linear_nearest(points, dim, &members, q),
        };
        donors.push(j);
        distances.push(d2.sqrt());
    }
    Ok(MatchColumn { level: w, donors, distances })
}

fn linear_nearest(points: &[f64], dim: usize, members: &[usize], q: &[f64]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for &j in members {
        let d = squared_distance(q, &points[j * dim..(j + 1) * dim]);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mahalanobis nearest neighbour on the non-intercept covariates.
pub fn match_covariates(d: &Dataset, v: &Array2<f64>, w: usize) -> Result<MatchColumn> {
    let z = whiten(d.substantive_covariates().view(), v)?;
    match_vector(z.view(), z.view(), d.treatment(), w)
}

/// For each unit, the nearest *other* unit in its own arm on a scalar
/// variable (`None` for a singleton arm). Used for within-arm conditional
/// variance estimates.
pub fn nearest_in_own_arm_scalar(values: &[f64], treatment: &[usize], n_levels: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; treatment.len()];
    for w in 0..n_levels {
        let mut arm: Vec<usize> = (0..treatment.len()).filter(|&j| treatment[j] == w).collect();
        arm.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        for (s, &i) in arm.iter().enumerate() {
            let left = (s > 0).then(|| arm[s - 1]);
            let right = arm.get(s + 1).copied();
            out[i] = match (left, right) {
                (Some(l), Some(r)) => {
                    let (dl, dr) = ((values[i] - values[l]).abs(), (values[r] - values[i]).abs());
                    if dl < dr || (dl == dr && l < r) {
                        Some(l)
                    } else {
                        Some(r)
                    }
                }
                (l, r) => l.or(r),
            };
        }
    }
    out
}

/// Vector analogue of [`nearest_in_own_arm_scalar`] (Euclidean).
pub fn nearest_in_own_arm_vector(
    rows: ArrayView2<'_, f64>,
    treatment: &[usize],
    n_levels: usize,
) -> Vec<Option<usize>> {
    let dim = rows.ncols();
    let std = rows.as_standard_layout();
    let points = std.as_slice().expect("standard layout");
    let mut out = vec![None; treatment.len()];
    for w in 0..n_levels {
        let members: Vec<usize> = (0..treatment.len()).filter(|&j| treatment[j] == w).collect();
        if members.len() < 2 {
            continue;
        }
        let tree = KdTree::new(points, dim, members.clone());
        for &i in &members {
            out[i] = tree.nearest(&points[i * dim..(i + 1) * dim], Some(i)).map(|(j, _)| j);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_nearest_and_tie_break() {
        // donors in arm 0 at indices 1,2,3 with values 0.10, 0.28, 0.50
        let treat = [1, 0, 0, 0, 1];
        let values = [0.30, 0.10, 0.28, 0.50, 0.0];
        let m = match_scalar(&values, &values, &treat, 0).unwrap();
        assert_eq!(m.donors[0], 2);
        assert!((m.distances[0] - 0.02).abs() < 1e-12);

        // query 0.5 equidistant from donors at indices 2 (0.4) and 4 (0.6)
        let treat = [1, 1, 0, 1, 0];
        let donor = [0.0, 0.0, 0.4, 0.0, 0.6];
        let query = [0.5, 0.5, 0.4, 0.5, 0.6];
        let m = match_scalar(&query, &donor, &treat, 0).unwrap();
        assert_eq!(m.donors[0], 2);
    }

    #[test]
    fn scalar_self_match() {
        let treat = [0, 0, 1];
        let v = [0.2, 0.2, 0.9];
        let m = match_scalar(&v, &v, &treat, 0).unwrap();
        assert_eq!(m.donors, vec![0, 1, 0]);
        assert_eq!(m.distances[1], 0.0);
    }

    #[test]
    fn empty_pool() {
        let err = match_scalar(&[0.1], &[0.1], &[0], 1).unwrap_err();
        assert!(matches!(err, Error::EmptyDonorPool { level: 2 }));
    }

    #[test]
    fn vector_exact_hit() {
        let rows = array![[0.1, 0.2], [0.3, 0.3], [0.1, 0.2]];
        let treat = [1, 0, 0];
        let m = match_vector(rows.view(), rows.view(), &treat, 0).unwrap();
        assert_eq!(m.donors[0], 2);
        assert_eq!(m.distances[0], 0.0);
    }

    #[test]
    fn covariance_with_divisor_n() {
        let x = array![[1.0, 0.0, 0.0], [1.0, 2.0, 0.0], [1.0, 0.0, 2.0], [1.0, 2.0, 2.0]];
        let d = Dataset::from_parts(x, vec![0, 1, 0, 1], vec![0.0; 4], true).unwrap();
        let v = mahalanobis_matrix(&d).unwrap();
        assert_eq!(v, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [5.0, 5.0]];
        let d = Dataset::from_parts(x, vec![0, 1, 0, 1], vec![0.0; 4], false).unwrap();
        assert!(matches!(mahalanobis_matrix(&d), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn identity_metric_reduces_to_scalar() {
        let x = array![[0.3], [1.2], [-0.4], [0.9], [2.0], [0.0]];
        let treat = vec![0, 1, 0, 1, 1, 0];
        let d = Dataset::from_parts(x.clone(), treat.clone(), vec![0.0; 6], false).unwrap();
        let eye = array![[1.0]];
        let col: Vec<f64> = x.column(0).to_vec();
        for w in 0..2 {
            let a = match_covariates(&d, &eye, w).unwrap();
            let b = match_scalar(&col, &col, &treat, w).unwrap();
            assert_eq!(a.donors, b.donors);
        }
    }

    #[test]
    fn signed_zeros_tie_to_lowest_index() {
        let v: [f64; 4] = [-0.0, 0.0, 0.0, 1.0];
        let t = [0, 0, 1, 1];
        let m = match_scalar(&v, &v, &t, 0).unwrap();
        assert_eq!(m.donors, vec![0, 1, 0, 0]);
        let v: [f64; 4] = [0.5, 0.0, -0.0, 1.0];
        let t = [1, 0, 0, 1];
        assert_eq!(match_scalar(&v, &v, &t, 0).unwrap().donors[3], 1);
    }

    #[test]
    fn reuse_counts_skip_self() {
        let m = MatchColumn { level: 0, donors: vec![0, 0, 0, 3], distances: vec![0.0; 4] };
        assert_eq!(m.reuse_counts(4), vec![2, 0, 0, 0]);
    }

    #[test]
    fn own_arm_neighbours() {
        let v = [0.1, 0.5, 0.2, 0.9, 0.35];
        let t = [0, 1, 0, 1, 0];
        let nn = nearest_in_own_arm_scalar(&v, &t, 2);
        assert_eq!(nn, vec![Some(2), Some(3), Some(0), Some(1), Some(2)]);
        let rows = array![[0.1], [0.5], [0.2], [0.9], [0.35]];
        assert_eq!(nearest_in_own_arm_vector(rows.view(), &t, 2), nn);
    }

    #[test]
    fn mahalanobis_spec_rejects_indefinite() {
        assert!(MatchSpec::new(0, Metric::Mahalanobis(array![[1.0, 2.0], [2.0, 1.0]])).is_err());
        assert!(MatchSpec::new(0, Metric::Mahalanobis(array![[2.0, 0.5], [0.5, 1.0]])).is_ok());
    }
}
