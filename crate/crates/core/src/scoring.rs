//! Agreement score between a candidate attribution matrix and a reference.
//!
//! Each cell is scored on three axes, each in `(0, 1]`:
//!
//! * direction: 1 when the two values share a sign, otherwise
//!   `min(1, (1 + theta1) / (|s| + |k| + theta1))`
//! * relative value: `min(1, (1 + theta2) / (|s - k| + 1))`
//! * rank: `1 / (|rank(s) - rank(k)| + 1)`, ranks by absolute value within a row
//!
//! and the cell score is their sum, in `(0, 3]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Slack in the direction term, in attribution units.
    pub theta1: f64,
    /// Slack in the relative value term, in attribution units.
    pub theta2: f64,
}

impl ScoreParams {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        for (name, v) in [("theta1", theta1), ("theta2", theta2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(Self { theta1, theta2 })
    }
}

/// Cell-averaged scores for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub score: f64,
    pub direction_score: f64,
    pub relative_value_score: f64,
    pub rank_score: f64,
    pub pct_same_sign: f64,
    pub pct_same_rank: f64,
}

/// Strictly positive product, or both exactly zero. Written with
/// comparisons so that tiny same-sign values whose product underflows still
/// agree.
pub fn same_sign(s: f64, k: f64) -> bool {
    (s > 0.0 && k > 0.0) || (s < 0.0 && k < 0.0)
}

// The halved forms below are algebraically identical to the textbook
// expressions and keep the denominators finite for values near f64::MAX.

pub fn lambda1(s: f64, k: f64, theta1: f64) -> f64 {
    if same_sign(s, k) {
        1.0
    } else {
        let num = 0.5 + 0.5 * theta1;
        let den = 0.5 * s.abs() + 0.5 * k.abs() + 0.5 * theta1;
        (num / den).min(1.0)
    }
}

pub fn lambda2(s: f64, k: f64, theta2: f64) -> f64 {
    let num = 0.5 + 0.5 * theta2;
    let den = (0.5 * s - 0.5 * k).abs() + 0.5;
    (num / den).min(1.0)
}

pub fn lambda3(rank_s: usize, rank_k: usize) -> f64 {
    1.0 / (rank_s.abs_diff(rank_k) as f64 + 1.0)
}

pub fn beta(s: f64, k: f64, rank_s: usize, rank_k: usize, params: ScoreParams) -> f64 {
    lambda1(s, k, params.theta1) + lambda2(s, k, params.theta2) + lambda3(rank_s, rank_k)
}

/// Rank of each entry by absolute value, 1 for the largest. Ties go to the
/// lower index.
pub fn importance_ranks(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
    let mut ranks = vec![0; row.len()];
    for (pos, idx) in order.into_iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

pub fn score_matrices(
    candidate: &Matrix,
    reference: &Matrix,
    params: ScoreParams,
) -> Result<ScoreBreakdown> {
    if candidate.shape() != reference.shape() {
        return Err(Error::dim(format!(
            "candidate is {}x{} but reference is {}x{}",
            candidate.rows(),
            candidate.cols(),
            reference.rows(),
            reference.cols()
        )));
    }
    let cells = candidate.rows() * candidate.cols();
    if cells == 0 {
        return Err(Error::dim("cannot score an empty matrix".to_string()));
    }
    let mut l1 = Vec::with_capacity(cells);
    let mut l2 = Vec::with_capacity(cells);
    let mut l3 = Vec::with_capacity(cells);
    let mut total = Vec::with_capacity(cells);
    let mut sign_hits = 0usize;
    let mut rank_hits = 0usize;
    for (cand, refr) in candidate.iter_rows().zip(reference.iter_rows()) {
        let rc = importance_ranks(cand);
        let rr = importance_ranks(refr);
        for j in 0..cand.len() {
            let (s, k) = (cand[j], refr[j]);
            let a = lambda1(s, k, params.theta1);
            let b = lambda2(s, k, params.theta2);
            let c = lambda3(rc[j], rr[j]);
            l1.push(a);
            l2.push(b);
            l3.push(c);
            total.push(a + b + c);
            if same_sign(s, k) || (s == 0.0 && k == 0.0) {
                sign_hits += 1;
            }
            if rc[j] == rr[j] {
                rank_hits += 1;
            }
        }
    }
    let mean = |v: Vec<f64>| compensated_sum(v) / cells as f64;
    Ok(ScoreBreakdown {
        score: mean(total),
        direction_score: mean(l1),
        relative_value_score: mean(l2),
        rank_score: mean(l3),
        pct_same_sign: sign_hits as f64 / cells as f64,
        pct_same_rank: rank_hits as f64 / cells as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda1_examples() {
        assert_eq!(lambda1(2.0, 5.0, 0.1), 1.0);
        assert_eq!(lambda1(-2.0, -5.0, 7.0), 1.0);
        assert_eq!(lambda1(1.0, -1.0, 1.5), 2.5 / 3.5);
        assert!((lambda1(1.0, -1.0, 1.5) - 0.714_285_714_285_714_3).abs() < 1e-15);
        assert_eq!(lambda1(0.0, 0.0, 1.5), 1.0);
        // inside the theta1 band around the diagonal the score saturates
        assert_eq!(lambda1(0.25, -0.25, 1.5), 1.0);
    }

    #[test]
    fn lambda2_examples() {
        assert_eq!(lambda2(3.3, 3.3, 1.0), 1.0);
        assert_eq!(lambda2(10.0, 0.0, 1.0), 2.0 / 11.0);
        assert_eq!(lambda2(2.5, 3.5, 1.0), 1.0);
        assert_eq!(lambda2(-4.0, 2.0, 6.0), 1.0);
    }

    #[test]
    fn ranks_and_lambda3() {
        assert_eq!(importance_ranks(&[5.0, -7.0, 1.0]), vec![2, 1, 3]);
        assert_eq!(importance_ranks(&[0.0, 0.0]), vec![1, 2]);
        assert_eq!(importance_ranks(&[-3.0]), vec![1]);
        assert_eq!(lambda3(2, 2), 1.0);
        assert_eq!(lambda3(1, 3), 1.0 / 3.0);
        assert_eq!(lambda3(1, 2), 0.5);
    }

    #[test]
    fn beta_examples() {
        let params = ScoreParams::new(1.5, 1.0).unwrap();
        assert_eq!(beta(4.0, 4.0, 2, 2, params), 3.0);
        // direct evaluation: 2.5/3.5 + 2/3 + 1
        let got = beta(1.0, -1.0, 1, 1, params);
        let want = 2.5 / 3.5 + 2.0 / 3.0 + 1.0;
        assert!((got - want).abs() < 1e-15);
        assert!((got - 2.380_952_380_952_381).abs() < 1e-14);
        assert_eq!(beta(2.5, 3.5, 1, 1, params), 3.0);
    }

    #[test]
    fn params_must_be_positive() {
        assert!(ScoreParams::new(0.0, 1.0).is_err());
        assert!(ScoreParams::new(1.0, -1.0).is_err());
        assert!(ScoreParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn identical_and_negated_matrices() {
        let m = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 4.0, -6.0]]).unwrap();
        let params = ScoreParams::new(1.5, 1.0).unwrap();
        let same = score_matrices(&m, &m, params).unwrap();
        assert_eq!(same.score, 3.0);
        assert_eq!(same.pct_same_sign, 1.0);
        assert_eq!(same.pct_same_rank, 1.0);
        let neg = score_matrices(&m.map(|v| -v), &m, params).unwrap();
        assert_eq!(neg.pct_same_sign, 0.0);
        assert_eq!(neg.pct_same_rank, 1.0);
        assert!(score_matrices(&m, &Matrix::zeros(2, 2), params).is_err());
    }

    #[test]
    fn zeros_count_as_same_sign() {
        let m = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let params = ScoreParams::new(1.5, 1.0).unwrap();
        assert_eq!(score_matrices(&m, &m, params).unwrap().pct_same_sign, 1.0);
        let other = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(
            score_matrices(&m, &other, params).unwrap().pct_same_sign,
            0.5
        );
    }

    fn wide_real() -> impl Strategy<Value = f64> {
        prop_oneof![
            Just(0.0),
            Just(-0.0),
            Just(f64::MIN_POSITIVE / 4.0),
            Just(-f64::MIN_POSITIVE / 8.0),
            Just(f64::MAX),
            Just(-f64::MAX),
            -1e6..1e6f64,
            -1e300..1e300f64,
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn lambdas_in_unit_interval(s in wide_real(), k in wide_real(), t1 in 1e-3..1e3f64, t2 in 1e-3..1e3f64, rs in 1usize..40, rk in 1usize..40) {
            let params = ScoreParams::new(t1, t2).unwrap();
            for v in [lambda1(s, k, t1), lambda2(s, k, t2), lambda3(rs, rk)] {
                prop_assert!(v > 0.0 && v <= 1.0, "{v}");
            }
            let b = beta(s, k, rs, rk, params);
            prop_assert!(b > 0.0 && b <= 3.0);
        }

        #[test]
        fn lambda2_non_increasing_in_gap(s in -1e3..1e3f64, g1 in 0.0..1e3f64, g2 in 0.0..1e3f64, t2 in 0.1..50.0f64) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(lambda2(s, s + lo, t2) >= lambda2(s, s + hi, t2));
        }

        #[test]
        fn lambda1_non_decreasing_in_slack(s in -1e3..1e3f64, k in -1e3..1e3f64, a in 0.01..50.0f64, b in 0.01..50.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lambda1(s, k, lo) <= lambda1(s, k, hi));
        }

        #[test]
        fn breakdown_identities(
            (cand, refr, perm) in (1usize..12, 1usize..8).prop_flat_map(|(n, p)| (
                prop::collection::vec(-50.0..50.0f64, n * p).prop_map(move |v| Matrix::from_vec(n, p, v).unwrap()),
                prop::collection::vec(-50.0..50.0f64, n * p).prop_map(move |v| Matrix::from_vec(n, p, v).unwrap()),
                Just((0..p).collect::<Vec<usize>>()).prop_shuffle(),
            )),
            t1 in 0.5..20.0f64,
            t2 in 0.5..50.0f64,
        ) {
            let params = ScoreParams::new(t1, t2).unwrap();
            let b = score_matrices(&cand, &refr, params).unwrap();
            prop_assert!((b.score - (b.direction_score + b.relative_value_score + b.rank_score)).abs() <= 1e-12);
            prop_assert!(b.score > 0.0 && b.score <= 3.0);
            prop_assert!((0.0..=1.0).contains(&b.pct_same_sign) && (0.0..=1.0).contains(&b.pct_same_rank));
            let permuted = score_matrices(&cand.select_columns(&perm), &refr.select_columns(&perm), params).unwrap();
            prop_assert!((permuted.score - b.score).abs() <= 1e-12);
            prop_assert!((permuted.direction_score - b.direction_score).abs() <= 1e-12);
            prop_assert!((permuted.relative_value_score - b.relative_value_score).abs() <= 1e-12);
            prop_assert!((permuted.rank_score - b.rank_score).abs() <= 1e-12);
            prop_assert_eq!(permuted.pct_same_sign, b.pct_same_sign);
            prop_assert_eq!(permuted.pct_same_rank, b.pct_same_rank);
        }
    }
}
