mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use specinject::cgspan::*;
use specinject::rng::{seeded, standard_normals};
use specinject::sphharm::{index, n_coeffs, QuadratureGrid, SHVector};
use specinject::Error;

const Y00: f64 = 0.282_094_791_773_878_14;

#[test]
fn gaunt_examples() {
    for (l, m) in [(0, 0), (3, -2), (6, 5)] {
        assert!((gaunt(0, 0, l, m, l, m).unwrap() - Y00).abs() < 1e-14);
    }
    assert_eq!(gaunt(1, 0, 1, 1, 1, 1).unwrap(), 0.0);
    assert_eq!(gaunt(2, 1, 3, -1, 2, 0).unwrap(), 0.0);
    let rule = common::oracle_rule(12, 25);
    let want = common::product_integral(&[(1, 0), (1, 0), (2, 0)], &rule);
    assert!((gaunt(1, 0, 1, 0, 2, 0).unwrap() - want).abs() < 1e-12);
    assert!(gaunt(2, 3, 1, 0, 2, 0).is_err());
}

#[test]
fn couplings_obey_selection_rules_and_symmetry() {
    let t = GauntTable::shared();
    for l1 in 0..=5usize {
        for l2 in 0..=5usize {
            for m1 in -(l1 as i64)..=l1 as i64 {
                for m2 in -(l2 as i64)..=l2 as i64 {
                    let a = t.couplings(l1, m1, l2, m2);
                    assert_eq!(a, t.couplings(l2, m2, l1, m1));
                    for &(l, m, _) in a {
                        let (l, m) = (l as usize, m as i64);
                        assert!(l1.abs_diff(l2) <= l && l <= l1 + l2);
                        assert_eq!((l1 + l2 + l) % 2, 0);
                        assert!(selection_allowed(l1, m1, l2, m2, l, m));
                    }
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn product_matches_pointwise(seed in 0u64..500, la in 0usize..=5, lb in 0usize..=5) {
        let mut rng = seeded(seed);
        let a = SHVector::new(la, standard_normals(&mut rng, n_coeffs(la))).unwrap();
        let b = SHVector::new(lb, standard_normals(&mut rng, n_coeffs(lb))).unwrap();
        let p = product_expand(&a, &b).unwrap();
        prop_assert_eq!(p.degree(), la + lb);
        let grid = QuadratureGrid::standard();
        let (sa, sb, sp) = (grid.synthesize(&a), grid.synthesize(&b), grid.synthesize(&p));
        for k in 0..sa.len() {
            prop_assert!((sa[k] * sb[k] - sp[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn monomial_support_bound(seed in 0u64..200) {
        let mut rng = seeded(seed);
        use rand::Rng;
        let d = rng.random_range(1..=3usize);
        let factors: Vec<(usize, i64)> = (0..d)
            .map(|_| {
                let l = rng.random_range(0..=3usize);
                (l, rng.random_range(-(l as i64)..=l as i64))
            })
            .collect();
        let top: usize = factors.iter().map(|f| f.0).sum();
        let v = monomial_to_sh(&MonomialSpec::new(factors).unwrap()).unwrap();
        for (i, c) in v.coeffs().iter().enumerate() {
            if i >= n_coeffs(top) {
                prop_assert!(c.abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn product_examples() {
    let b = SHVector::new(2, standard_normals(&mut seeded(2), 9)).unwrap();
    let p = product_expand(&SHVector::basis(0, 0).unwrap(), &b).unwrap();
    for (x, y) in p.coeffs().iter().zip(b.coeffs()) {
        assert!((x - Y00 * y).abs() < 1e-14);
    }
    let y10 = SHVector::basis(1, 0).unwrap();
    let p = product_expand(&y10, &y10).unwrap();
    for (i, c) in p.coeffs().iter().enumerate() {
        if i != index(0, 0) && i != index(2, 0) {
            assert!(c.abs() < 1e-14);
        }
    }
    assert!(p.get(2, 0).abs() > 0.1);
    let big = SHVector::basis(7, 0).unwrap();
    assert!(product_expand(&big, &big).is_err());
}

#[test]
fn monomial_examples_against_quadrature() {
    let rule = common::oracle_rule(12, 25);
    let sq = monomial_to_sh(&MonomialSpec::new(vec![(1, 1), (1, 1)]).unwrap()).unwrap();
    let want = common::product_integral(&[(1, 1), (1, 1), (2, 2)], &rule);
    assert!(want.abs() > 0.1);
    assert!((sq.get(2, 2) - want).abs() < 1e-12);
    let v = monomial_to_sh(&MonomialSpec::new(vec![(2, 2), (1, 1)]).unwrap()).unwrap();
    let want = common::product_integral(&[(2, 2), (1, 1), (3, 3)], &rule);
    assert!(want.abs() > 0.1);
    assert!((v.get(3, 3) - want).abs() < 1e-12);
}

#[test]
fn stretched_coefficients_against_quadrature() {
    assert!((stretched_top_coefficient(2, 1, 0).unwrap() - 1.0).abs() < 1e-12);
    let rule = common::oracle_rule(14, 31);
    let c = stretched_top_coefficient(2, 2, 0).unwrap();
    let want = common::product_integral(&[(2, 2), (2, 2), (4, 4)], &rule);
    assert!(want.abs() > 0.1 && (c - want).abs() < 1e-12);
    let c = stretched_top_coefficient(2, 2, 1).unwrap();
    let want = common::product_integral(&[(2, 2), (2, 2), (1, 1), (5, 5)], &rule);
    assert!(want.abs() > 0.05 && (c - want).abs() < 1e-12);
    assert!(stretched_top_coefficient(2, 1, 2).is_err());
}

#[test]
fn weight_multiplicity_is_one_at_the_top() {
    assert_eq!(weight_multiplicity(2, 2), 1);
    assert_eq!(weight_multiplicity(1, 4), 1);
    assert_eq!(weight_multiplicity(3, 3), 1);
    // one below the top weight: move one unit off any factor
    assert_eq!(weight_multiplicity(2, 3), 1);
}

/// Projects every monomial of degree ≤ `d` in `φ_L` onto `ℋ_n` on the oracle
/// rule and returns the SVD rank.
fn brute_force_span_rank(l: usize, d: usize, n: usize) -> usize {
    let rule = common::oracle_rule(2 * (d * l + n) + 2, 4 * (d * l + n) + 3);
    let p = n_coeffs(l);
    let phi: Vec<Vec<f64>> = rule
        .iter()
        .map(|&(t, ph, _)| {
            (0..=l)
                .flat_map(|ll| (-(ll as i64)..=ll as i64).map(move |m| (ll, m)))
                .map(|(ll, m)| common::real_sh(ll, m, t, ph))
                .collect()
        })
        .collect();
    let mut multisets: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::new();
        for ms in &frontier {
            let start = ms.last().copied().unwrap_or(0);
            for v in start..p {
                let mut e = ms.clone();
                e.push(v);
                next.push(e);
            }
        }
        multisets.extend(next.iter().cloned());
        frontier = next;
    }
    let rows: Vec<f64> = multisets
        .iter()
        .flat_map(|ms| {
            (-(n as i64)..=n as i64).map(|m| {
                rule.iter()
                    .zip(&phi)
                    .map(|(&(t, ph, w), f)| {
                        w * ms.iter().map(|&i| f[i]).product::<f64>() * common::real_sh(n, m, t, ph)
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
        })
        .collect();
    let m = DMatrix::from_row_slice(multisets.len(), 2 * n + 1, &rows);
    let sv = m.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > 1e-8 * smax && s > 1e-9).count()
}

#[test]
fn span_rank_examples() {
    assert_eq!(span_rank(2, 2, 4).unwrap(), 9);
    assert_eq!(span_rank(2, 2, 5).unwrap(), 0);
    assert_eq!(span_rank(1, 3, 3).unwrap(), 7);
    for (l, d, n) in [(1, 3, 3), (1, 2, 1), (2, 2, 3), (1, 3, 4)] {
        assert_eq!(span_rank(l, d, n).unwrap(), brute_force_span_rank(l, d, n), "({l},{d},{n})");
    }
}

#[test]
fn span_rank_law_for_small_cells() {
    for (l, d) in [(1, 2), (1, 3), (1, 4), (2, 2), (2, 3), (3, 2), (3, 3), (2, 4)] {
        for n in 0..=(d * l + 2).min(12) {
            let want = if n <= d * l { 2 * n + 1 } else { 0 };
            assert_eq!(span_rank(l, d, n).unwrap(), want, "L={l} d={d} n={n}");
        }
    }
}

#[test]
fn span_rank_resource_guard() {
    assert!(matches!(span_rank(12, 4, 1), Err(Error::Resource { .. }) | Err(Error::Argument(_))));
}

#[test]
fn json_cache_round_trip() {
    let t = GauntTable::new(3).unwrap();
    let mut buf = Vec::new();
    t.write_json(&mut buf).unwrap();
    let back = GauntTable::read_json(buf.as_slice()).unwrap();
    assert_eq!(back.max_degree(), 3);
    for (l1, m1, l2, m2) in [(1, 0, 1, 0), (2, -1, 3, 2), (3, 3, 3, -3)] {
        assert_eq!(back.couplings(l1, m1, l2, m2), t.couplings(l1, m1, l2, m2));
    }
    let text = String::from_utf8(buf).unwrap().replace(CONVENTION_ID, "other");
    assert!(GauntTable::read_json(text.as_bytes()).is_err());
}
