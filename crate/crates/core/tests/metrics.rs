mod common;

use proptest::prelude::*;
use specinject::metrics::*;
use specinject::rng::seeded;

const BB_AT: [f64; 4] = [0.194, 0.036, 0.283, 0.056];
const BB_ABOVE: [f64; 4] = [0.043, 0.009, 0.021, 0.026];

#[test]
fn normalized_error_examples() {
    let e = normalized_error(3.57, 35.7).unwrap();
    assert!((e.y - 0.1).abs() < 1e-15);
    assert_eq!(normalized_error(0.0, 2.0).unwrap().y, 0.0);
    assert!(normalized_error(1.0, 0.0).is_err());
    assert!(normalized_error(1.0, -1.0).is_err());
    let f = vec![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
    assert_eq!(force_mae(&f, &f).unwrap(), 0.0);
    assert!((force_mae(&f, &[[0.0; 3]; 2]).unwrap() - 7.5 / 6.0).abs() < 1e-15);
    assert!((sigma_f(&[f]).unwrap() - (15.25f64 / 2.0).sqrt()).abs() < 1e-15);
}

#[test]
fn recovery_examples() {
    let r = recovery_fraction(0.166, 0.134, 0.132);
    assert!((r.rho.unwrap() - 0.032 / 0.034).abs() < 1e-12);
    assert!((r.rho.unwrap() - 0.941).abs() < 5e-4);
    let u = recovery_fraction(0.337, 0.2, 0.430);
    assert_eq!(u.rho, None);
    assert_eq!(u.undefined_reason, Some(UndefinedReason::NonPositiveDenominator));
    assert!((u.delta - 0.137).abs() < 1e-12);
    assert_eq!(recovery_fraction(0.3, 0.1, 0.3).rho, None);
}

proptest! {
    #[test]
    fn rho_anchors(lo in 0.01f64..10.0, gap in 1e-3f64..5.0) {
        let hi = lo - gap;
        prop_assert_eq!(recovery_fraction(lo, lo, hi).rho, Some(0.0));
        prop_assert!((recovery_fraction(lo, hi, hi).rho.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rho_scale_invariant(lo in 0.1f64..5.0, a in -1.0f64..1.0, gap in 1e-2f64..1.0, s in 1e-3f64..1e3) {
        let r1 = recovery_fraction(lo, lo - a * gap, lo - gap).rho.unwrap();
        let r2 = recovery_fraction(s * lo, s * (lo - a * gap), s * (lo - gap)).rho.unwrap();
        prop_assert!((r1 - r2).abs() <= 1e-9 * r1.abs().max(1.0));
    }

    #[test]
    fn r2_is_rotation_invariant(seed in 0u64..5000) {
        let mut rng = seeded(seed);
        let z = specinject::rng::standard_normals(&mut rng, 36);
        let inj: Vec<Vec<[f64; 3]>> = vec![(0..6).map(|a| [z[3 * a], z[3 * a + 1], z[3 * a + 2]]).collect()];
        let pred: Vec<Vec<[f64; 3]>> = vec![(0..6).map(|a| [z[18 + 3 * a], z[19 + 3 * a], z[20 + 3 * a]]).collect()];
        let q = common::random_rotation(&mut rng);
        let rot = |v: &Vec<Vec<[f64; 3]>>| -> Vec<Vec<[f64; 3]>> {
            v.iter().map(|f| f.iter().map(|x| common::rotate(&q, *x)).collect()).collect()
        };
        let a = r2_injected(&pred, &inj).unwrap();
        let b = r2_injected(&rot(&pred), &rot(&inj)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn bootstrap_ci_brackets_the_mean(v in prop::collection::vec(-5.0f64..5.0, 2..12), seed in 0u64..100) {
        let ci = bootstrap_mean_ci(&v, 1000, seed).unwrap();
        prop_assert!(ci.lo <= ci.hi);
        let (min, max) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
        prop_assert!(ci.lo >= min - 1e-12 && ci.hi <= max + 1e-12);
    }
}

#[test]
fn sharpness_examples() {
    let xi = sharpness_ratio(0.913, 0.078).unwrap();
    assert!((xi - 11.705).abs() < 1e-3);
    assert_eq!(sharpness_ratio(0.4, 0.4), Some(1.0));
    assert_eq!(sharpness_ratio(0.4, 0.0), None);

    let at = RhoEstimate::from(recovery_fraction(0.3, 0.158, 0.4));
    let above = RhoEstimate::from(recovery_fraction(0.3, 0.275, 0.4));
    let s = sharpness(&at, &above);
    assert_eq!(s.kind, SharpnessKind::DeltaFallback);
    assert!((s.xi.unwrap() - 0.142 / 0.025).abs() < 1e-9);
    assert!((s.xi.unwrap() - 5.68).abs() < 1e-9);

    let lower = sharpness(
        &RhoEstimate { rho: Some(0.9), ci: Some((0.8, 1.0)), delta: 0.1 },
        &RhoEstimate { rho: Some(0.05), ci: Some((-0.02, 0.1)), delta: 0.01 },
    );
    assert_eq!(lower.kind, SharpnessKind::LowerBound);
    assert!((lower.xi.unwrap() - 8.0).abs() < 1e-12);
}

#[test]
fn r2_examples() {
    let inj = vec![vec![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]]];
    let half: Vec<Vec<[f64; 3]>> = vec![inj[0].iter().map(|f| f.map(|v| 0.5 * v)).collect()];
    assert_eq!(r2_injected(&inj, &inj).unwrap(), 1.0);
    assert_eq!(r2_injected(&[vec![[0.0; 3]; 2]], &inj).unwrap(), 0.0);
    assert!((r2_injected(&half, &inj).unwrap() - 0.75).abs() < 1e-15);
    assert!(r2_injected(&inj, &[vec![[0.0; 3]; 2]]).is_err());
}

#[test]
fn bootstrap_examples() {
    let c = bootstrap_mean_ci(&[2.5, 2.5, 2.5], 1000, 1).unwrap();
    assert_eq!((c.mean, c.lo, c.hi), (2.5, 2.5, 2.5));
    let a = bootstrap_mean_ci(&[0.3, 1.2, -0.4, 2.0], 2000, 42).unwrap();
    let b = bootstrap_mean_ci(&[0.3, 1.2, -0.4, 2.0], 2000, 42).unwrap();
    assert_eq!(a, b);
    assert!(bootstrap_mean_ci(&[1.0], 1000, 1).is_err());
    assert!(bootstrap_mean_ci(&[1.0, 2.0], 10, 1).is_err());

    // Two values: resample means take 0, 1/2, 1 with weights 1/4, 1/2, 1/4,
    // so the 2.5 % and 97.5 % points sit on the extremes.
    let outcomes = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let means: Vec<f64> = outcomes.iter().map(|o| (o[0] + o[1]) / 2.0).collect();
    let mass = |x: f64| means.iter().filter(|m| **m == x).count() as f64 / 4.0;
    assert!(mass(0.0) > 0.025 && mass(1.0) > 0.025);
    let ci = bootstrap_mean_ci(&[0.0, 1.0], 100_000, 3).unwrap();
    assert_eq!((ci.lo, ci.hi), (0.0, 1.0));
}

#[test]
fn cluster_contrast_examples() {
    let c = cluster_bootstrap_contrast(&BB_AT, &BB_ABOVE, 10_000, 42).unwrap();
    assert!((c.mean_at - 0.14225).abs() < 1e-12);
    assert!((c.mean_above - 0.02475).abs() < 1e-12);
    assert!((c.ratio - 5.7).abs() <= 0.1);
    assert!(c.ratio_ci.0 < c.ratio && c.ratio < c.ratio_ci.1);
    assert!(c.diff_ci.0 < c.diff && c.diff < c.diff_ci.1);
    assert_eq!(c.resamples, 10_000);
    assert_eq!(c.excluded, 0);
    assert_eq!(c, cluster_bootstrap_contrast(&BB_AT, &BB_ABOVE, 10_000, 42).unwrap());

    let same = cluster_bootstrap_contrast(&BB_ABOVE, &BB_ABOVE, 2000, 1).unwrap();
    assert!((same.ratio - 1.0).abs() < 1e-12);
    assert!((same.ratio_ci.0 - 1.0).abs() < 1e-12 && (same.ratio_ci.1 - 1.0).abs() < 1e-12);
    assert!(cluster_bootstrap_contrast(&BB_AT, &BB_ABOVE[..3], 2000, 1).is_err());
}

#[test]
fn cluster_contrast_counts_exclusions() {
    let c = cluster_bootstrap_contrast(&[1.0, 1.0, 1.0], &[1.0, 1.0, -1.5], 5000, 9).unwrap();
    // resamples whose above-mean is non-positive: at least two draws of the third cluster
    let p: f64 = 1.0 - (8.0 + 3.0 * 4.0) / 27.0;
    let frac = c.excluded as f64 / 5000.0;
    assert!((frac - p).abs() < 0.03, "{frac} vs {p}");
}

#[test]
fn leave_one_out_matches_direct_means() {
    let got = leave_one_out_ratios(&BB_AT, &BB_ABOVE).unwrap();
    for drop in 0..4 {
        let mut a = 0.0;
        let mut b = 0.0;
        for i in (0..4).filter(|&i| i != drop) {
            a += BB_AT[i];
            b += BB_ABOVE[i];
        }
        assert!((got[drop].unwrap() - a / b).abs() < 1e-12);
    }
}

#[test]
fn report_json_keeps_nulls() {
    let rep = MetricReport::from_seeds(5, &[(0.3, 0.29, 0.4)], 1000, 42).unwrap();
    assert_eq!(rep.rho, None);
    let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
    assert!(v["rho"].is_null());
    assert!(v["ci_low"].is_null());
    assert_eq!(v["undefined_reason"], "non_positive_denominator");
    let back: MetricReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, rep);

    let ok = MetricReport::from_seeds(4, &[(0.166, 0.134, 0.132), (0.17, 0.135, 0.13)], 1000, 42).unwrap();
    assert!(ok.rho.is_some() && ok.undefined_reason.is_none());
    assert!(ok.ci_low.unwrap() <= ok.rho.unwrap() && ok.rho.unwrap() <= ok.ci_high.unwrap());
}
