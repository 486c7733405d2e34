//! Reference imputers and predictors: column-mean imputation, K-nearest-
//! neighbor imputation with partial-distance weighting, and closed-form
//! linear regression. These double as comparators in experiments and as
//! oracles in tests. All of them leave observed entries bit-identical and
//! operate on the same scaled representation the network sees.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::dataset::{ColumnKind, DataMatrix, MaskMatrix};
use crate::error::{GrapeError, Result};

/// Additive term in inverse-distance weights, so duplicate rows (distance
/// zero) stay finite.
const KNN_WEIGHT_EPSILON: f64 = 1e-8;

/// Ridge jitter on the normal equations, guarding singular designs.
const OLS_JITTER: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub imputed: Array2<f64>,
    pub method: String,
    pub params: BTreeMap<String, String>,
}

/// Fills each missing cell with the column mean over observed entries;
/// categorical columns use the modal class (ties break to the lowest code).
pub fn mean_impute(data: &DataMatrix, mask: &MaskMatrix) -> Result<BaselineResult> {
    check_shapes(data, mask)?;
    let (n, m) = (data.n_rows(), data.n_cols());
    let mut fill = vec![0.0; m];
    for col in data.schema() {
        let j = col.index;
        let observed: Vec<f64> = (0..n)
            .filter(|&i| mask.is_observed(i, j))
            .map(|i| data.values()[(i, j)])
            .collect();
        if observed.is_empty() {
            return Err(GrapeError::InvalidArgument(format!(
                "column {j} has no observed entries"
            )));
        }
        fill[j] = match col.kind {
            ColumnKind::Continuous => observed.iter().sum::<f64>() / observed.len() as f64,
            ColumnKind::Categorical { cardinality } => {
                let mut counts = vec![0usize; cardinality];
                for &v in &observed {
                    counts[v as usize] += 1;
                }
                let mut best = 0;
                for c in 1..cardinality {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                best as f64
            }
        };
    }
    let mut imputed = data.values().clone();
    for i in 0..n {
        for j in 0..m {
            if !mask.is_observed(i, j) {
                imputed[(i, j)] = fill[j];
            }
        }
    }
    Ok(BaselineResult {
        imputed,
        method: "mean".into(),
        params: BTreeMap::new(),
    })
}

/// Imputes each missing `(i, j)` from the rows that observe column `j`,
/// weighted by inverse partial distance.
///
/// Distance between two partially observed rows is the Euclidean distance
/// over their mutually observed coordinates, rescaled by
/// `m / shared_count`; rows sharing no coordinate are not candidates. The
/// nearest `k` candidates (ties break to the lower row index) contribute
/// with weight `1 / (d + 1e-8)`. With no candidate at all, the cell falls
/// back to the column mean.
pub fn knn_impute(data: &DataMatrix, mask: &MaskMatrix, k: usize) -> Result<BaselineResult> {
    check_shapes(data, mask)?;
    let (n, m) = (data.n_rows(), data.n_cols());
    if n < 2 {
        return Err(GrapeError::InvalidArgument(
            "knn imputation needs at least 2 rows".into(),
        ));
    }
    if k == 0 {
        return Err(GrapeError::InvalidArgument("k must be >= 1".into()));
    }
    let mean = mean_impute(data, mask)?;
    let mut imputed = data.values().clone();
    for i in 0..n {
        for j in 0..m {
            if mask.is_observed(i, j) {
                continue;
            }
            let mut candidates: Vec<(f64, usize)> = (0..n)
                .filter(|&r| r != i && mask.is_observed(r, j))
                .filter_map(|r| partial_distance(data, mask, i, r).map(|d| (d, r)))
                .collect();
            if candidates.is_empty() {
                imputed[(i, j)] = mean.imputed[(i, j)];
                continue;
            }
            candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            candidates.truncate(k);
            let mut num = 0.0;
            let mut den = 0.0;
            for &(d, r) in &candidates {
                let w = 1.0 / (d + KNN_WEIGHT_EPSILON);
                num += w * data.values()[(r, j)];
                den += w;
            }
            imputed[(i, j)] = num / den;
        }
    }
    let mut params = BTreeMap::new();
    params.insert("k".into(), k.to_string());
    Ok(BaselineResult {
        imputed,
        method: "knn".into(),
        params,
    })
}

/// Partial Euclidean distance between rows `a` and `b`: squared differences
/// over mutually observed columns, scaled by `m / shared`, then rooted.
/// `None` when the rows share no observed coordinate.
fn partial_distance(data: &DataMatrix, mask: &MaskMatrix, a: usize, b: usize) -> Option<f64> {
    let m = data.n_cols();
    let mut shared = 0usize;
    let mut sq = 0.0;
    for j in 0..m {
        if mask.is_observed(a, j) && mask.is_observed(b, j) {
            let d = data.values()[(a, j)] - data.values()[(b, j)];
            sq += d * d;
            shared += 1;
        }
    }
    if shared == 0 {
        return None;
    }
    Some((sq * m as f64 / shared as f64).sqrt())
}

/// Ordinary least squares with intercept, solved on the normal equations
/// with a ridge jitter; returns predictions for the test rows.
pub fn linear_regression_fit_predict(
    x_train: &Array2<f64>,
    y_train: &[f64],
    x_test: &Array2<f64>,
) -> Result<Vec<f64>> {
    let (n, p) = x_train.dim();
    if n != y_train.len() {
        return Err(GrapeError::Shape(format!(
            "{n} design rows but {} targets",
            y_train.len()
        )));
    }
    if x_test.ncols() != p {
        return Err(GrapeError::Shape(format!(
            "train has {p} columns, test has {}",
            x_test.ncols()
        )));
    }
    if n == 0 {
        return Err(GrapeError::InvalidArgument("empty training design".into()));
    }
    let coef = fit_ols(x_train, y_train);
    Ok((0..x_test.nrows())
        .map(|i| {
            let mut y = coef[p];
            for j in 0..p {
                y += coef[j] * x_test[(i, j)];
            }
            y
        })
        .collect())
}

/// Solves `(X'X + jitter I) beta = X'y` with the intercept as the last
/// coefficient, via Gaussian elimination with partial pivoting.
fn fit_ols(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.dim();
    let cols = p + 1;
    let design_at = |i: usize, j: usize| -> f64 {
        if j < p {
            x[(i, j)]
        } else {
            1.0
        }
    };
    let mut gram = Array2::zeros((cols, cols));
    let mut rhs = Array1::zeros(cols);
    for i in 0..n {
        for a in 0..cols {
            let da = design_at(i, a);
            rhs[a] += da * y[i];
            for b in a..cols {
                gram[(a, b)] += da * design_at(i, b);
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += OLS_JITTER;
    }
    solve_linear(gram, rhs)
}

fn solve_linear(mut a: Array2<f64>, mut b: Array1<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[(r, col)].abs() > a[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a[(col, c)];
                a[(col, c)] = a[(pivot, c)];
                a[(pivot, c)] = tmp;
            }
            b.swap(col, pivot);
        }
        let diag = a[(col, col)];
        for r in (col + 1)..n {
            let factor = a[(r, col)] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[(r, c)] -= factor * a[(col, c)];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut out = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in (col + 1)..n {
            acc -= a[(col, c)] * out[c];
        }
        out[col] = acc / a[(col, col)];
    }
    out
}

fn check_shapes(data: &DataMatrix, mask: &MaskMatrix) -> Result<()> {
    if data.n_rows() != mask.n_rows() || data.n_cols() != mask.n_cols() {
        return Err(GrapeError::Shape(format!(
            "data is {}x{}, mask is {}x{}",
            data.n_rows(),
            data.n_cols(),
            mask.n_rows(),
            mask.n_cols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, sample_mask, ColumnSchema, MaskMatrix};
    use ndarray::array;

    fn masked(values: Array2<f64>, holes: &[(usize, usize)]) -> (DataMatrix, MaskMatrix) {
        let (n, m) = values.dim();
        let data = DataMatrix::from_continuous(values).unwrap();
        let mut observed = Array2::from_elem((n, m), true);
        for &(i, j) in holes {
            observed[(i, j)] = false;
        }
        (data, MaskMatrix::from_observed(observed))
    }

    #[test]
    fn mean_fills_with_column_mean() {
        let (data, mask) = masked(array![[1.0], [2.0], [9.0], [3.0]], &[(2, 0)]);
        let out = mean_impute(&data, &mask).unwrap();
        assert_eq!(out.imputed[(2, 0)], 2.0);
        assert_eq!(out.imputed[(0, 0)], 1.0);
    }

    #[test]
    fn mean_with_nothing_missing_is_identity() {
        let data = DataMatrix::from_continuous(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mask = MaskMatrix::fully_observed(2, 2);
        let out = mean_impute(&data, &mask).unwrap();
        assert_eq!(&out.imputed, data.values());
    }

    #[test]
    fn mean_uses_mode_for_categorical_columns() {
        let schema = vec![ColumnSchema::categorical(0, 2, "c")];
        let data = DataMatrix::new(array![[0.0], [0.0], [1.0], [0.0]], schema).unwrap();
        let mut observed = Array2::from_elem((4, 1), true);
        observed[(3, 0)] = false;
        let out = mean_impute(&data, &MaskMatrix::from_observed(observed)).unwrap();
        assert_eq!(out.imputed[(3, 0)], 0.0);
    }

    /// Single-pass oracle: independent of the implementation above.
    fn column_mean_oracle(data: &DataMatrix, mask: &MaskMatrix) -> Array2<f64> {
        let (n, m) = (data.n_rows(), data.n_cols());
        let mut out = data.values().clone();
        for j in 0..m {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..n {
                if mask.is_observed(i, j) {
                    sum += data.values()[(i, j)];
                    count += 1;
                }
            }
            for i in 0..n {
                if !mask.is_observed(i, j) {
                    out[(i, j)] = sum / count as f64;
                }
            }
        }
        out
    }

    #[test]
    fn mean_matches_independent_oracle_exactly() {
        let (raw, _) = make_synthetic(20, 6, 3, 0.2, 4).unwrap();
        let mask = sample_mask(20, 6, 0.35, 5).unwrap();
        let out = mean_impute(&raw, &mask).unwrap();
        assert_eq!(out.imputed, column_mean_oracle(&raw, &mask));
    }

    #[test]
    fn knn_copies_duplicate_row_exactly() {
        let (data, mask) = masked(
            array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [9.0, 9.0, 9.0]],
            &[(0, 2)],
        );
        let out = knn_impute(&data, &mask, 1).unwrap();
        assert_eq!(out.imputed[(0, 2)], 3.0);
    }

    #[test]
    fn knn_caps_k_at_candidate_count() {
        let (data, mask) = masked(array![[1.0, 5.0], [2.0, 6.0], [3.0, 0.0]], &[(2, 1)]);
        let out = knn_impute(&data, &mask, 50).unwrap();
        // Both rows qualify; the nearer row (row 1) dominates the weighting.
        assert!(out.imputed[(2, 1)] > 5.5 && out.imputed[(2, 1)] < 6.0);
    }

    /// Brute-force KNN oracle: recomputes every pairwise distance from
    /// scratch with its own loops.
    fn knn_oracle(data: &DataMatrix, mask: &MaskMatrix, k: usize) -> Array2<f64> {
        let (n, m) = (data.n_rows(), data.n_cols());
        let mut out = data.values().clone();
        for i in 0..n {
            for j in 0..m {
                if mask.is_observed(i, j) {
                    continue;
                }
                let mut dists: Vec<(f64, usize)> = Vec::new();
                for r in 0..n {
                    if r == i || !mask.is_observed(r, j) {
                        continue;
                    }
                    let mut sq = 0.0;
                    let mut shared = 0;
                    for c in 0..m {
                        if mask.is_observed(i, c) && mask.is_observed(r, c) {
                            let d = data.values()[(i, c)] - data.values()[(r, c)];
                            sq += d * d;
                            shared += 1;
                        }
                    }
                    if shared > 0 {
                        dists.push(((sq * m as f64 / shared as f64).sqrt(), r));
                    }
                }
                if dists.is_empty() {
                    let obs: Vec<f64> = (0..n)
                        .filter(|&r| mask.is_observed(r, j))
                        .map(|r| data.values()[(r, j)])
                        .collect();
                    out[(i, j)] = obs.iter().sum::<f64>() / obs.len() as f64;
                    continue;
                }
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (mut num, mut den) = (0.0, 0.0);
                for &(d, r) in dists.iter().take(k) {
                    let w = 1.0 / (d + 1e-8);
                    num += w * data.values()[(r, j)];
                    den += w;
                }
                out[(i, j)] = num / den;
            }
        }
        out
    }

    #[test]
    fn knn_matches_brute_force_oracle_on_hand_fixtures() {
        let fixtures: Vec<(Array2<f64>, Vec<(usize, usize)>)> = vec![
            (
                array![[0.1, 0.9], [0.2, 0.8], [0.3, 0.7], [0.4, 0.6], [0.5, 0.0]],
                vec![(4, 1)],
            ),
            (
                array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [0.5, 0.5]],
                vec![(0, 0), (2, 1)],
            ),
            (
                array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]],
                vec![(1, 0), (3, 1)],
            ),
            (
                array![[5.0, 5.0], [5.0, 5.0], [5.0, 5.0], [5.0, 5.0], [5.0, 1.0]],
                vec![(4, 1), (0, 0)],
            ),
            (
                array![[0.2, 0.4], [0.6, 0.1], [0.9, 0.9], [0.3, 0.3], [0.7, 0.5]],
                vec![(2, 0), (0, 1), (4, 0)],
            ),
        ];
        for (values, holes) in fixtures {
            let (data, mask) = masked(values, &holes);
            for k in [1, 2, 50] {
                let out = knn_impute(&data, &mask, k).unwrap();
                let oracle = knn_oracle(&data, &mask, k);
                for i in 0..data.n_rows() {
                    for j in 0..data.n_cols() {
                        let (a, b) = (out.imputed[(i, j)], oracle[(i, j)]);
                        assert!((a - b).abs() < 1e-9, "k={k} cell ({i},{j}): {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn knn_equidistant_neighbors_reduce_to_column_mean() {
        // Row 0 shares exactly one coordinate with each candidate, at the
        // same offset, so all candidate distances agree and the weighted
        // mean over the candidates is the plain mean of their column values.
        let values = array![
            [0.5, 0.0, 0.0],
            [0.7, 1.0, 0.0],
            [0.3, 2.0, 0.0],
            [0.7, 3.0, 0.0],
            [0.3, 4.0, 0.0]
        ];
        let mut observed = Array2::from_elem((5, 3), false);
        observed[(0, 0)] = true;
        for r in 1..5 {
            observed[(r, 0)] = true;
            observed[(r, 1)] = true;
        }
        // Row 0 observes nothing in column 2, so column 2 needs one observed
        // cell elsewhere to keep every column non-empty.
        observed[(1, 2)] = true;
        let data = DataMatrix::from_continuous(values).unwrap();
        let mask = MaskMatrix::from_observed(observed);
        let out = knn_impute(&data, &mask, 50).unwrap();
        assert!((out.imputed[(0, 1)] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn baselines_never_touch_observed_entries() {
        let (raw, _) = make_synthetic(15, 5, 3, 0.3, 6).unwrap();
        let mask = sample_mask(15, 5, 0.4, 7).unwrap();
        for result in [
            mean_impute(&raw, &mask).unwrap(),
            knn_impute(&raw, &mask, 5).unwrap(),
        ] {
            for i in 0..15 {
                for j in 0..5 {
                    if mask.is_observed(i, j) {
                        assert_eq!(result.imputed[(i, j)], raw.values()[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn ols_recovers_exact_linear_relation() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v + 1.0).collect();
        let test = array![[10.0], [-3.0]];
        let pred = linear_regression_fit_predict(&x, &y, &test).unwrap();
        assert!((pred[0] - 21.0).abs() < 1e-6);
        assert!((pred[1] + 5.0).abs() < 1e-6);
    }

    #[test]
    fn ols_constant_design_predicts_target_mean() {
        let x = Array2::from_elem((4, 2), 3.0);
        let y = vec![1.0, 2.0, 3.0, 6.0];
        let pred = linear_regression_fit_predict(&x, &y, &x).unwrap();
        for p in pred {
            assert!((p - 3.0).abs() < 1e-6);
        }
    }

    /// Householder QR least squares, written independently of the normal
    /// equations route in the implementation.
    fn qr_least_squares(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
        let (n, p) = x.dim();
        let cols = p + 1;
        let mut a = Array2::zeros((n, cols));
        for i in 0..n {
            for j in 0..p {
                a[(i, j)] = x[(i, j)];
            }
            a[(i, p)] = 1.0;
        }
        let mut b: Vec<f64> = y.to_vec();
        for k in 0..cols.min(n) {
            let mut norm = 0.0;
            for i in k..n {
                norm += a[(i, k)] * a[(i, k)];
            }
            let norm = norm.sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
            let mut v = vec![0.0; n];
            v[k] = a[(k, k)] - alpha;
            for i in (k + 1)..n {
                v[i] = a[(i, k)];
            }
            let vtv: f64 = v.iter().map(|t| t * t).sum();
            if vtv == 0.0 {
                continue;
            }
            for j in k..cols {
                let dot: f64 = (k..n).map(|i| v[i] * a[(i, j)]).sum();
                let scale = 2.0 * dot / vtv;
                for i in k..n {
                    a[(i, j)] -= scale * v[i];
                }
            }
            let dot: f64 = (k..n).map(|i| v[i] * b[i]).sum();
            let scale = 2.0 * dot / vtv;
            for i in k..n {
                b[i] -= scale * v[i];
            }
        }
        let mut beta = vec![0.0; cols];
        for k in (0..cols).rev() {
            let mut acc = b[k];
            for j in (k + 1)..cols {
                acc -= a[(k, j)] * beta[j];
            }
            beta[k] = acc / a[(k, k)];
        }
        beta
    }

    #[test]
    fn ols_agrees_with_independent_qr_solver() {
        let (raw, _) = make_synthetic(20, 3, 3, 0.5, 11).unwrap();
        let x = raw.values().clone();
        let y: Vec<f64> = (0..20)
            .map(|i| 1.5 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.2 * x[(i, 2)] + 0.37 + (i as f64) * 0.01)
            .collect();
        let beta_qr = qr_least_squares(&x, &y);
        let pred = linear_regression_fit_predict(&x, &y, &x).unwrap();
        for i in 0..20 {
            let qr_pred = beta_qr[0] * x[(i, 0)]
                + beta_qr[1] * x[(i, 1)]
                + beta_qr[2] * x[(i, 2)]
                + beta_qr[3];
            assert!(
                (pred[i] - qr_pred).abs() < 1e-8,
                "row {i}: {} vs {qr_pred}",
                pred[i]
            );
        }
    }
}
