//! Overfitting statistics over recovery errors.

mod audit;
mod frechet;
mod histogram;

pub use audit::{
    audit, write_audit_csv, AuditOptions, AuditReport, AuditSubject, ErrorSampleSet, SampleLabel,
    AUDIT_CSV_HEADER, GAP_THRESHOLD, P_THRESHOLD,
};
pub use frechet::{frechet_gaussian_distance, gaussian_fit, toy_features};
pub use histogram::{histogram, write_histogram_csv, Histogram};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("median"));
    }
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*m)
}

/// `(mre_val - mre_train) / mre_val`.
pub fn mre_gap(mre_train: f64, mre_val: f64) -> Result<f64> {
    if !(mre_val > 0.0) || !mre_val.is_finite() || !mre_train.is_finite() {
        return Err(Error::invalid(format!(
            "MRE-gap needs a positive validation MRE, got {mre_val}"
        )));
    }
    Ok((mre_val - mre_train) / mre_val)
}

/// Two-sample Kolmogorov–Smirnov statistic and p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Smallest p-value reported; underflow is represented by this value.
pub const MIN_P_VALUE: f64 = 1e-300;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `sup |F_a - F_b|` for pre-sorted samples.
fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic p-value for statistic `d` with sample sizes `n`, `m`.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    let p = if lambda < 1.18 {
        if lambda <= 0.0 {
            return 1.0;
        }
        // Complementary form, convergent for small λ.
        let mut cdf = 0.0;
        for k in 1..=100 {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < 1e-12 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(MIN_P_VALUE, 1.0)
}

fn check_samples(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty(op));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    check_samples(a, b, "ks_two_sample")?;
    let d = ks_statistic_sorted(&sorted(a), &sorted(b));
    Ok(KsResult {
        d,
        p: ks_p_value(d, a.len(), b.len()),
    })
}

/// Permutation p-value of the KS statistic: `(1 + #{d_perm ≥ d}) / (1 + iterations)`.
pub fn permutation_p(a: &[f64], b: &[f64], iterations: usize, rng: &mut Rng) -> Result<f64> {
    check_samples(a, b, "permutation_p")?;
    if iterations < 100 {
        return Err(Error::invalid(
            "permutation test needs at least 100 iterations",
        ));
    }
    let observed = ks_statistic_sorted(&sorted(a), &sorted(b));
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut hits = 0usize;
    for _ in 0..iterations {
        rng.shuffle(&mut pooled);
        let (pa, pb) = pooled.split_at(a.len());
        if ks_statistic_sorted(&sorted(pa), &sorted(pb)) >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + iterations) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0]).unwrap(), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.0);
        assert!(median(&[]).is_err());
        let mut rng = Rng::new(1, 0);
        let v = rng.normal_vec(1001);
        assert_eq!(median(&v).unwrap(), sorted(&v)[500]);
    }

    #[test]
    fn gap_examples() {
        let g = mre_gap(9.94e-4, 3.30e-2).unwrap();
        assert!((g - 9.70e-1).abs() < 5e-4, "{g}");
        assert_eq!(mre_gap(0.2, 0.2).unwrap(), 0.0);
        assert_eq!(mre_gap(0.0, 0.3).unwrap(), 1.0);
        assert!(mre_gap(0.1, 0.0).is_err());
        assert!(mre_gap(0.3, 0.1).unwrap() < 0.0);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [0.3, 0.1, 0.2, 0.2];
        let r = ks_two_sample(&a, &[0.2, 0.2, 0.1, 0.3]).unwrap();
        assert_eq!((r.d, r.p), (0.0, 1.0));
        let lo: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let hi: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        let r = ks_two_sample(&lo, &hi).unwrap();
        assert_eq!(r.d, 1.0);
        assert!(r.p < 1e-20);
    }

    #[test]
    fn ks_statistic_handles_ties() {
        let r = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r.d - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn p_value_branches_meet() {
        // Both series evaluated either side of the switch point.
        let ne: f64 = 50.0;
        let c = ne.sqrt() + 0.12 + 0.11 / ne.sqrt();
        let below = ks_p_value((1.18 - 1e-9) / c, 100, 100);
        let above = ks_p_value((1.18 + 1e-9) / c, 100, 100);
        assert!((below - above).abs() < 1e-8, "{below} {above}");
    }

    #[test]
    fn p_value_reference_points() {
        // Kolmogorov survival function: Q(1.0) = 0.26999967, Q(1.36) = 0.04948588.
        let ne: f64 = 1e6;
        let c = ne.sqrt() + 0.12 + 0.11 / ne.sqrt();
        let n = 2_000_000;
        assert!((ks_p_value(1.0 / c, n, n) - 0.269_999_67).abs() < 1e-6);
        assert!((ks_p_value(1.36 / c, n, n) - 0.049_485_88).abs() < 1e-7);
        assert!((ks_p_value(0.5 / c, n, n) - 0.963_945_2).abs() < 1e-6);
    }

    #[test]
    fn ks_agrees_with_permutation_oracle() {
        let mut rng = Rng::new(77, 0);
        let a: Vec<f64> = (0..100).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.uniform() + 0.15).collect();
        let ks = ks_two_sample(&a, &b).unwrap();
        let perm = permutation_p(&a, &b, 5000, &mut Rng::new(78, 0)).unwrap();
        assert!((ks.p - perm).abs() < 0.05, "{} vs {}", ks.p, perm);
    }

    #[test]
    fn permutation_basics() {
        let a = [0.1, 0.2, 0.3, 0.4];
        let p = permutation_p(&a, &a, 200, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(p, 1.0);
        let b = [0.15, 0.5, 0.6, 0.7];
        let p1 = permutation_p(&a, &b, 300, &mut Rng::new(2, 1)).unwrap();
        let p2 = permutation_p(&a, &b, 300, &mut Rng::new(2, 1)).unwrap();
        assert_eq!(p1, p2);
        assert!(permutation_p(&a, &b, 99, &mut Rng::new(2, 1)).is_err());
    }
}
