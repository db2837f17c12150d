use std::sync::OnceLock;

use bmorse::{build_g, quotient, Construction, Enclosure, PLMap, Rational};
use proptest::prelude::*;

fn ctx() -> &'static Construction {
    static CTX: OnceLock<Construction> = OnceLock::new();
    CTX.get_or_init(Construction::default)
}

fn g22() -> &'static PLMap {
    static G: OnceLock<PLMap> = OnceLock::new();
    G.get_or_init(|| build_g(ctx(), 2, 2).unwrap().map)
}

fn unit() -> impl Strategy<Value = Rational> {
    (1i64..1_000_000).prop_flat_map(|den| (0..=den).prop_map(move |num| Rational::frac(num, den)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn finer_enclosures_stay_consistent(x in unit()) {
        let coarse = ctx().f_eval(&x, &Rational::pow2(-8)).unwrap();
        let fine = ctx().f_eval(&x, &Rational::pow2(-24)).unwrap();
        prop_assert!(coarse.width() <= Rational::pow2(-8));
        prop_assert!(fine.width() <= Rational::pow2(-24));
        prop_assert!(coarse.intersects(&fine));
        prop_assert!(fine.lo() >= &Rational::zero() && fine.hi() <= &Rational::one());
    }

    #[test]
    fn graph_is_symmetric(x in unit()) {
        let eps = Rational::pow2(-20);
        let mirrored = Rational::one() - &x;
        let a = ctx().f_eval(&x, &eps).unwrap();
        let b = ctx().f_eval(&mirrored, &eps).unwrap();
        prop_assert!(a.intersects(&b));
    }

    #[test]
    fn nested_frames_shrink(x in unit()) {
        let (value, frames) = ctx().f_eval_traced(&x, &Rational::pow2(-20)).unwrap();
        for pair in frames.windows(2) {
            let (outer, inner) = (&pair[0], &pair[1]);
            prop_assert!(outer.u <= inner.u && inner.v <= outer.v);
            prop_assert!(inner.gen == outer.gen + 1);
            prop_assert!(inner.slope() > outer.slope() * Rational::from(2));
            prop_assert!(&inner.h * Rational::from(2) <= outer.h);
            prop_assert!(inner.range().is_subset_of(&outer.range()));
        }
        let last = frames.last().unwrap();
        prop_assert!(last.contains(&x));
        prop_assert!(value.intersects(&last.range()));
    }

    #[test]
    fn approximant_preimages_are_exact(u in unit(), v in unit()) {
        prop_assume!(u != v);
        let (u, v) = if u < v { (u, v) } else { (v, u) };
        prop_assert_eq!(g22().preimage_measure(&u, &v).unwrap(), &v - &u);
    }

    #[test]
    fn exact_quotients_match_direct_arithmetic(x in unit(), y in unit()) {
        prop_assume!(x != y);
        let eps = Rational::pow2(-16);
        let q = quotient(ctx(), &x, &y, &eps).unwrap();
        prop_assert!(q.value.width() <= eps);
        let fx = ctx().f_eval(&x, &eps).unwrap();
        let fy = ctx().f_eval(&y, &eps).unwrap();
        if fx.is_point() && fy.is_point() {
            let direct = (fx.lo() - fy.lo()) / (&x - &y);
            prop_assert_eq!(q.value, Enclosure::point(direct));
        }
    }

    #[test]
    fn plmap_json_roundtrip(ks in prop::collection::btree_set(1i64..1023, 1..20), seed in 0u64..1000) {
        let mut xs = vec![Rational::zero()];
        xs.extend(ks.iter().map(|&k| Rational::frac(k, 1024)));
        xs.push(Rational::one());
        let ys: Vec<Rational> = (0..xs.len() as u64)
            .map(|i| Rational::frac(((i * 7919 + seed) % 101) as i64, 100))
            .collect();
        let g = PLMap::new(xs, ys).unwrap();
        let back: PLMap = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn approximant_breakpoints_lie_on_the_limit() {
    let eps = Rational::pow2(-20);
    for (n, cutoff) in [(1, 3), (2, 2)] {
        let g = build_g(ctx(), n, cutoff).unwrap().map;
        for (x, y) in g.breakpoints().iter().zip(g.values()) {
            let f = ctx().f_eval(x, &eps).unwrap();
            assert!(f.contains(y), "g({x}) = {y} but f({x}) in {f}");
        }
    }
}

#[test]
fn approximants_agree_off_their_segments() {
    let eps = Rational::pow2(-30);
    for k in 0..=512 {
        let x = Rational::frac(k, 512);
        let chain = ctx().locate(&x, 6).unwrap();
        let Some(n) = chain.classification.order() else {
            continue;
        };
        let f = ctx().f_eval(&x, &eps).unwrap();
        for m in n..n + 3 {
            let fm = ctx().fn_eval(&x, m, &eps).unwrap();
            assert!(f.intersects(&fm), "f({x}) = {f}, f_{m}({x}) = {fm}");
        }
    }
}

#[test]
fn every_schedule_step_preserves_measure_within_its_height() {
    let c = ctx();
    let targets = bmorse::plmap::schedule(c, 1, 4).unwrap();
    let mut g = PLMap::tent();
    let mut level_max: Vec<Rational> = Vec::new();
    for t in &targets {
        let next = g.modify(c, &t.frame, &t.node).unwrap();
        assert!(g.sup_distance(&next) <= t.height());
        assert!(next.verify_measure().preserving);
        let m = t.node.m as usize;
        if level_max.len() < m {
            level_max.push(Rational::zero());
        }
        level_max[m - 1] = level_max[m - 1].clone().max(t.height());
        g = next;
    }
    assert!(level_max.windows(2).all(|w| w[1] <= w[0]), "{level_max:?}");
}
