use crate::error::{Error, Result};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("cannot project a non-finite vector".into()));
    }
    if v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
        return Ok(v.to_vec());
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    Ok(v.iter().map(|&x| (x - tau).max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points_and_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]).unwrap(), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let p = project_simplex(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert!(matches!(project_simplex(&[]), Err(Error::EmptyVector)));
        assert!(project_simplex(&[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn lands_on_simplex(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = project_simplex(&v).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
            let p = project_simplex(&v).unwrap();
            let q = project_simplex(&p).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn closest_point(v in proptest::collection::vec(-5.0f64..5.0, 2..8), seed in 0u64..1000) {
            // Projection is at least as close as any other simplex point.
            let p = project_simplex(&v).unwrap();
            let n = v.len();
            let mut other: Vec<f64> = (0..n).map(|i| ((seed as usize * 31 + i * 17) % 13) as f64 + 0.1).collect();
            let s: f64 = other.iter().sum();
            other.iter_mut().for_each(|x| *x /= s);
            let d = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            prop_assert!(d(&p) <= d(&other) + 1e-9);
        }
    }
}
