use nalgebra::{DMatrix, DVector};
use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
use proptest::prelude::*;

use steinvar::stats::{compute_stats, RegressionData, StatsError};

fn q(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact RSS and centered total sum of squares from the normal equations
/// of the centered design; `None` when the design is singular.
fn exact_stats(y: &[i64], x: &[Vec<i64>]) -> Option<(f64, f64)> {
    let n = y.len();
    let p = x[0].len();
    let nq = q(n as i64);
    let ybar = y.iter().map(|&v| q(v)).fold(BigRational::zero(), |a, b| a + b) / &nq;
    let yc: Vec<BigRational> = y.iter().map(|&v| q(v) - &ybar).collect();
    let mut xc = vec![vec![BigRational::zero(); p]; n];
    for j in 0..p {
        let mean = x.iter().map(|r| q(r[j])).fold(BigRational::zero(), |a, b| a + b) / &nq;
        for i in 0..n {
            xc[i][j] = q(x[i][j]) - &mean;
        }
    }
    // augmented [X'X | X'y]
    let mut m = vec![vec![BigRational::zero(); p + 1]; p];
    for a in 0..p {
        for b in 0..p {
            m[a][b] = (0..n).map(|i| &xc[i][a] * &xc[i][b]).fold(BigRational::zero(), |s, v| s + v);
        }
        m[a][p] = (0..n).map(|i| &xc[i][a] * &yc[i]).fold(BigRational::zero(), |s, v| s + v);
    }
    for col in 0..p {
        let pivot = (col..p).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col && !row[col].is_zero() {
                let f = &row[col] / &pivot_row[col];
                for (v, pv) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *v -= &f * pv;
                }
            }
        }
    }
    let beta: Vec<BigRational> = (0..p).map(|r| &m[r][p] / &m[r][r]).collect();
    let mut rss = BigRational::zero();
    let mut total = BigRational::zero();
    for i in 0..n {
        let fit = (0..p).map(|j| &xc[i][j] * &beta[j]).fold(BigRational::zero(), |s, v| s + v);
        let r = &yc[i] - fit;
        rss += &r * &r;
        total += &yc[i] * &yc[i];
    }
    Some((rss.to_f64()?, total.abs().to_f64()?))
}

fn dataset() -> impl Strategy<Value = (Vec<i64>, Vec<Vec<i64>>)> {
    (1usize..5).prop_flat_map(|p| {
        (p + 3..p + 10).prop_flat_map(move |n| {
            (prop::collection::vec(-20i64..20, n), prop::collection::vec(prop::collection::vec(-6i64..6, p), n))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn least_squares_matches_rational_normal_equations((y, x) in dataset()) {
        let (n, p) = (y.len(), x[0].len());
        let yv = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
        let xm = DMatrix::from_fn(n, p, |i, j| x[i][j] as f64);
        let exact = exact_stats(&y, &x);
        let computed = RegressionData::from_raw(yv, xm).and_then(|d| compute_stats(&d));
        match (exact, computed) {
            (None, Err(StatsError::RankDeficient { .. })) => {}
            (Some((_, total)), Err(StatsError::DegenerateResponse)) => prop_assert_eq!(total, 0.0),
            (Some((rss, total)), Ok(s)) => {
                prop_assert!((s.total_ss - total).abs() <= 1e-12 * total);
                prop_assert!((s.rss - rss).abs() <= 1e-9 * total, "rss {} vs exact {}", s.rss, rss);
                prop_assert!((s.r_squared - (1.0 - rss / total)).abs() <= 1e-9);
            }
            (e, c) => prop_assert!(false, "exact {:?} vs computed {:?}", e, c),
        }
    }
}

#[test]
fn singular_design_reports_rank() {
    let y = vec![1, 4, 2, 8, 5, 7];
    let x: Vec<Vec<i64>> = (0..6).map(|i| vec![i, 2 * i + 1, 3]).collect();
    assert!(exact_stats(&y, &x).is_none());
    let err = RegressionData::from_raw(
        DVector::from_iterator(6, y.iter().map(|&v| v as f64)),
        DMatrix::from_fn(6, 3, |i, j| x[i][j] as f64),
    )
    .and_then(|d| compute_stats(&d))
    .unwrap_err();
    assert!(err.to_string().contains("rank"));
}
