use proptest::prelude::*;
use shadowlab::conjugacy::{ball_homeo, conjugacy_map, BoundedMap, PerturbedMap};
use shadowlab::hyperbolicity::{delta_for_epsilon, detect_split, DeltaMode, GHCertificate};
use shadowlab::operators::{Operator, ShiftOperator, TailRule, WeightSequence};
use shadowlab::shadowing::{make_chain, make_two_sided, shadow_finite, shadow_two_sided, ChainOptions};
use shadowlab::spaces::{SeminormFamily, SeqVec};

fn split_shift(a: f64) -> Operator {
    let c = |v| TailRule::Constant { value: v };
    ShiftOperator::forward(WeightSequence::from_slice(-1, &[1.0 / a, a], c(1.0 / a), c(a)).unwrap()).into()
}

fn cert(op: &Operator, fam: &SeminormFamily, grades: &[usize]) -> GHCertificate {
    detect_split(op, fam, grades).unwrap().certificate().unwrap()
}

fn small_vec() -> impl Strategy<Value = SeqVec> {
    prop::collection::vec((-6i64..=6, -1.0f64..1.0), 1..5).prop_map(|p| SeqVec::from_pairs(p).unwrap())
}

fn families() -> impl Strategy<Value = SeminormFamily> {
    prop_oneof![
        Just(SeminormFamily::Lp { p: 1.0 }),
        Just(SeminormFamily::Lp { p: 2.0 }),
        Just(SeminormFamily::C0),
        Just(SeminormFamily::RapidDecrease),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn finite_chains_respect_the_deviation_bound(
        a in 0.1f64..0.8, fam in families(), seed in any::<u64>(), len in 1usize..25, x0 in small_vec(),
    ) {
        let op = split_shift(a);
        let g = cert(&op, &fam, &[1]);
        let delta = delta_for_epsilon(&g, 0.1, 1, DeltaMode::Finite).unwrap().delta;
        let ch = make_chain(&op, &fam, &x0, len, 1, delta, seed, &ChainOptions::default()).unwrap();
        prop_assert!(ch.defect_norms().unwrap().iter().all(|d| *d <= delta));
        let r = shadow_finite(&ch, &g, &op).unwrap();
        prop_assert!(r.bound_holds);
        prop_assert!(r.max_deviation < 0.1);
    }

    #[test]
    fn two_sided_segments_stay_within_epsilon(a in 0.2f64..0.7, seed in any::<u64>(), m in 1usize..8) {
        let op = split_shift(a);
        let fam = SeminormFamily::Lp { p: 2.0 };
        let g = cert(&op, &fam, &[1]);
        let delta = delta_for_epsilon(&g, 0.1, 1, DeltaMode::TwoSided { inverse_bound: 1.0 / a }).unwrap().delta;
        let seg = make_two_sided(&op, &fam, &SeqVec::basis(0), m, 1, delta, seed, &ChainOptions::default()).unwrap();
        let r = shadow_two_sided(&seg, &g, &op, 1e-12).unwrap();
        prop_assert_eq!(r.deviations.len(), 2 * m + 1);
        prop_assert!(r.bound_holds && r.max_deviation < 0.1);
    }

    #[test]
    fn delta_is_linear_in_epsilon(eps in 1e-6f64..10.0, k in 2.0f64..100.0) {
        let g = cert(&split_shift(0.25), &SeminormFamily::RapidDecrease, &[2]);
        let d1 = delta_for_epsilon(&g, eps, 2, DeltaMode::Finite).unwrap().delta;
        let dk = delta_for_epsilon(&g, k * eps, 2, DeltaMode::Finite).unwrap().delta;
        prop_assert!((dk - k * d1).abs() <= 1e-14 * dk);
    }

    #[test]
    fn conjugacy_displacement_scales_with_g(x in small_vec(), scale in 0.1f64..1.0) {
        let op = split_shift(0.25);
        let fam = SeminormFamily::RapidDecrease;
        let g = cert(&op, &fam, &[1]);
        let gv = SeqVec::from_pairs([(-1, 0.002), (2, -0.001)]).unwrap();
        let disp = |v: SeqVec| {
            let s = PerturbedMap::new(op.clone(), BoundedMap::Constant { value: v }).unwrap();
            conjugacy_map(&g, &s, &x, 1, 1e-13).unwrap()
        };
        let full = disp(gv.clone());
        let part = disp(gv.scaled(scale).unwrap());
        prop_assert!(full.displacement <= full.displacement_bound);
        prop_assert!((part.displacement - scale * full.displacement).abs() <= 1e-12);
    }

    #[test]
    fn ball_homeo_roundtrip(x in small_vec(), ax in -0.5f64..0.5, bx in -0.5f64..0.5) {
        let fam = SeminormFamily::Lp { p: 2.0 };
        let center = SeqVec::basis(0);
        let a = SeqVec::from_pairs([(0, 1.0 + ax), (1, 0.2)]).unwrap();
        let b = SeqVec::from_pairs([(0, 1.0), (-1, bx)]).unwrap();
        let h = ball_homeo(&center, 1.0, &fam, 1, &a, &b).unwrap();
        prop_assert!(fam.eval(&h.apply(&a).unwrap().sub(&b).unwrap(), 1).unwrap() <= 1e-12);
        let back = h.inverse_apply(&h.apply(&x).unwrap()).unwrap();
        prop_assert!(fam.eval(&back.sub(&x).unwrap(), 1).unwrap() <= 1e-9);
        if fam.eval(&x.sub(&center).unwrap(), 1).unwrap() >= 1.0 {
            prop_assert_eq!(h.apply(&x).unwrap(), x);
        }
    }
}
