//! Cross-module checks through the public API, each against a value computed by hand.

use shadowlab::conjugacy::{
    conjugacy_map, psi_inverse, radial_homeo, verify_semiconjugacy, BoundedMap, PerturbedMap, Term,
};
use shadowlab::hyperbolicity::{
    classify_expansivity_shift, detect_split, orbit_growth_scan, ExpansivityKind, GHCertificate, SplitDetection,
    DEFAULT_DIVERGENCE_BOUND,
};
use shadowlab::operators::{Operator, ShiftOperator, TailRule, WeightSequence};
use shadowlab::shadowing::{
    counterexample_cycle, counterexample_operator, make_chain, shadow_finite, shadow_periodic, verify_shadowing, wide,
    ChainOptions, Pseudotrajectory, WideVec,
};
use shadowlab::spaces::{IndexWindow, SeminormFamily, SeqVec};
use shadowlab::Error;

fn c(v: f64) -> TailRule {
    TailRule::Constant { value: v }
}

fn doubling() -> Operator {
    ShiftOperator::forward(WeightSequence::constant(2.0).unwrap()).into()
}

fn split_shift(a: f64) -> Operator {
    ShiftOperator::forward(WeightSequence::from_slice(-1, &[1.0 / a, a], c(1.0 / a), c(a)).unwrap()).into()
}

fn l2() -> SeminormFamily {
    SeminormFamily::Lp { p: 2.0 }
}

fn seq(pairs: &[(i64, f64)]) -> SeqVec {
    SeqVec::from_pairs(pairs.iter().copied()).unwrap()
}

fn cert(op: &Operator, fam: &SeminormFamily, grades: &[usize]) -> GHCertificate {
    detect_split(op, fam, grades).unwrap().certificate().unwrap()
}

#[test]
fn doubling_shift_hand_example() {
    let op = doubling();
    let g = cert(&op, &l2(), &[1]);
    assert!(g.hyperbolic && g.trivial_splitting);
    let points = vec![WideVec::from(&SeqVec::basis(0)), WideVec::from(&seq(&[(1, 2.0), (0, 0.1)]))];
    let chain = Pseudotrajectory::from_points(&op, &l2(), 1, 0.1, points, false, 0).unwrap();
    let r = shadow_finite(&chain, &g, &op).unwrap();
    // T x = x₁ forces x = e₀ + 0.05e₋₁; the first point is then 0.05 away, the second exact.
    let x = r.shadow_point_exact.to_seq().unwrap();
    assert_eq!(x, seq(&[(0, 1.0), (-1, 0.05)]));
    assert_eq!(r.deviations, vec![0.05, 0.0]);
    let trace = verify_shadowing(&chain, &r.shadow_point_exact, &op, 1).unwrap();
    assert_eq!(trace.deviations, r.deviations);
}

#[test]
fn counterexample_against_the_zero_orbit() {
    let ce = counterexample_cycle(0.01).unwrap();
    ce.cycle.verify_defects().unwrap();
    assert!(ce.cycle.periodic);
    let trace = verify_shadowing(&ce.cycle, &WideVec::zero(), &Operator::Shift(counterexample_operator()), 1).unwrap();
    // 2⁷ · 0.01
    assert_eq!(trace.max_deviation, 1.28);
    assert_eq!(ce.failure.peak_norm, trace.max_deviation);
}

#[test]
fn exact_orbits_shadow_themselves() {
    let op = split_shift(0.25);
    let fam = SeminormFamily::RapidDecrease;
    let g = cert(&op, &fam, &[1]);
    let x0 = seq(&[(-3, 0.5), (2, -1.0)]);
    let opts = ChainOptions { scale: 0.0, window: None };
    let ch = make_chain(&op, &fam, &x0, 12, 1, 0.01, 3, &opts).unwrap();
    let r = shadow_finite(&ch, &g, &op).unwrap();
    assert_eq!(r.shadow_point_exact.to_seq().unwrap(), x0);
    assert!(r.deviations.iter().all(|d| *d == 0.0));

    // A fixed point of T = 2I is 0; the cycle (0, 0) shadows at 0 with zero residual.
    let t = Operator::scale(2.0).unwrap();
    let gt = cert(&t, &l2(), &[1]);
    let cy = Pseudotrajectory::from_points(&t, &l2(), 1, 0.1, vec![WideVec::zero(), WideVec::zero()], true, 0).unwrap();
    let r = shadow_periodic(&cy, &gt, &t, 1e-12).unwrap();
    assert!(r.shadow_point_exact.is_zero());
    assert_eq!(r.periodic_residual, Some(0.0));
}

#[test]
fn contraction_cycle_collapses_to_the_fixed_point() {
    // T = I/2, cycle (v, v) with defect −v/2: the series lands on the fixed point 0.
    let t = Operator::scale(0.5).unwrap();
    let g = cert(&t, &l2(), &[1]);
    let v = seq(&[(0, 0.04)]);
    let cy = Pseudotrajectory::from_points(&t, &l2(), 1, 0.05, vec![WideVec::from(&v), WideVec::from(&v)], true, 0).unwrap();
    let r = shadow_periodic(&cy, &g, &t, 1e-14).unwrap();
    let x = r.shadow_point_exact.to_seq().unwrap();
    assert!(x.max_abs() <= 1e-14, "{x:?}");
    assert!((r.max_deviation - 0.04).abs() <= 1e-14);
}

#[test]
fn closed_form_conjugacy() {
    // T = 2I, g ≡ c: φ(x) = x + c and T(φ(x)) = 2x + 2c = φ(S(x)).
    let t = Operator::scale(2.0).unwrap();
    let g = cert(&t, &l2(), &[1]);
    let cvec = seq(&[(0, 0.3), (2, -0.1)]);
    let s = PerturbedMap::new(t.clone(), BoundedMap::Constant { value: cvec.clone() }).unwrap();
    let x = seq(&[(0, 1.0), (1, -2.0)]);
    let p = conjugacy_map(&g, &s, &x, 1, 1e-15).unwrap();
    let expected = x.add(&cvec).unwrap();
    assert!(l2().eval(&p.phi_x.sub(&expected).unwrap(), 1).unwrap() <= 1e-14);

    let phi = |y: &SeqVec| Ok(conjugacy_map(&g, &s, y, 1, 1e-15)?.phi_x);
    let chk = verify_semiconjugacy(&t, &s, phi, std::slice::from_ref(&x), &l2(), 1).unwrap();
    assert!(chk.max_residual <= 1e-13);

    // The identity is not a conjugacy: the residual is exactly ‖g‖.
    let wrong = verify_semiconjugacy(&t, &s, |y: &SeqVec| Ok(y.clone()), &[x], &l2(), 1).unwrap();
    let gn = l2().eval(&cvec, 1).unwrap();
    assert!((wrong.max_residual - gn).abs() <= 1e-15 * gn);
}

#[test]
fn psi_of_minus_constant_on_doubling() {
    // M = {0}, N = X: Ψ⁻¹ϕ = −Σ_{k≥1} 2^{−k} ϕ, so ϕ ≡ −c gives c.
    let t = Operator::scale(2.0).unwrap();
    let g = cert(&t, &l2(), &[1]);
    let cv = seq(&[(0, 0.25)]);
    let s = PerturbedMap::new(t, BoundedMap::zero()).unwrap();
    let p = psi_inverse(&BoundedMap::Constant { value: cv.scaled(-1.0).unwrap() }, &s, &g, &SeqVec::zero(), 1, 1e-15).unwrap();
    assert!((p.value.coeff(0) - 0.25).abs() <= 1e-15);
    let zero = psi_inverse(&BoundedMap::zero(), &s, &g, &cv, 1, 1e-15).unwrap();
    assert!(zero.value.is_zero());
}

#[test]
fn psi_on_split_shift_keeps_forward_terms_on_m() {
    let op = split_shift(0.25);
    let fam = SeminormFamily::RapidDecrease;
    let g = cert(&op, &fam, &[1]);
    let s = PerturbedMap::new(op, BoundedMap::zero()).unwrap();
    let p = psi_inverse(&BoundedMap::Constant { value: SeqVec::basis(0) }, &s, &g, &SeqVec::zero(), 1, 1e-12).unwrap();
    // e₀ ∈ M: only the terms T^k P_M e₀ = 4^{−k} e_k contribute.
    assert!(p.value.iter().all(|(j, _)| j >= 0));
    let sum: f64 = p.value.iter().map(|(_, v)| v.abs()).sum();
    // Σ_{k≥0} 4^{−k} = 4/3 up to the truncation tail.
    assert!((sum - 4.0 / 3.0).abs() <= 1e-11, "{sum}");
    assert!(p.in_m_plus_tinv_n);
}

#[test]
fn psi_linear_in_the_map() {
    let op = split_shift(0.5);
    let fam = SeminormFamily::Lp { p: 1.0 };
    let g = cert(&op, &fam, &[1]);
    let s = PerturbedMap::new(op, BoundedMap::zero()).unwrap();
    let w = IndexWindow::new(-2, 2).unwrap();
    let f1 = BoundedMap::CoordinateTable { window: w, knots: vec![[-1.0, -0.2], [0.0, 0.0], [1.0, 0.3]], lipschitz: 0.3 };
    let f2 = BoundedMap::Constant { value: seq(&[(-1, 0.1), (1, 0.2)]) };
    let combo =
        BoundedMap::Combination { terms: vec![Term { coef: 2.5, map: f1.clone() }, Term { coef: 1.0, map: f2.clone() }] };
    let x = seq(&[(-3, 0.7), (0, -0.4), (2, 1.1)]);
    let tol = 1e-13;
    let a = psi_inverse(&f1, &s, &g, &x, 1, tol).unwrap();
    let b = psi_inverse(&f2, &s, &g, &x, 1, tol).unwrap();
    let ab = psi_inverse(&combo, &s, &g, &x, 1, tol).unwrap();
    let lin = SeqVec::axpy(2.5, &a.value, &b.value).unwrap();
    let gap = fam.eval(&ab.value.sub(&lin).unwrap(), 1).unwrap();
    assert!(gap <= 4.0 * (ab.tail_bound + a.tail_bound + b.tail_bound) + 1e-14, "{gap}");
}

#[test]
fn radial_hand_interpolation() {
    // x₀ = 0, r = 1, a = 0.2e₀, b = 0.4e₀, k = 2: knots (1, 1), (1.4, 2.8), (3, 3).
    let h = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &seq(&[(0, 0.2)]), &seq(&[(0, 0.4)])).unwrap();
    assert_eq!(h.k, 2);
    let expected = [[1.0, 1.0], [1.4, 2.8], [3.0, 3.0]];
    for (got, want) in h.knots.iter().zip(expected) {
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12, "{got:?}");
    }
    assert!((h.apply(&seq(&[(0, 0.2)])).unwrap().coeff(0) - 0.4).abs() < 1e-12);
    let outside = seq(&[(0, 0.9), (1, 0.9)]);
    assert_eq!(h.apply(&outside).unwrap(), outside);
    let same = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &seq(&[(0, 0.2)]), &seq(&[(0, 0.2)])).unwrap();
    let y = seq(&[(0, 0.1), (3, -0.3)]);
    assert_eq!(same.apply(&y).unwrap(), y);
}

#[test]
fn forward_verdict_matches_orbit_growth() {
    let op = doubling();
    let Operator::Shift(s) = &op else { unreachable!() };
    for fam in [l2(), SeminormFamily::RapidDecrease] {
        let v = classify_expansivity_shift(s, &fam, &[1, 2], 200).unwrap();
        assert_eq!(v.kind, ExpansivityKind::PositivelyExpansiveForward);
        for k in [1, 2] {
            let scan = orbit_growth_scan(&op, &fam, &SeqVec::basis(0), k, 200, false, DEFAULT_DIVERGENCE_BOUND).unwrap();
            assert!(scan.first_exceed.is_some());
        }
    }
}

#[test]
fn certificate_survives_json() {
    let op = split_shift(0.25);
    let g = cert(&op, &SeminormFamily::RapidDecrease, &[1, 2, 3]);
    let text = serde_json::to_string(&SplitDetection::Certificate(g.clone())).unwrap();
    let back: SplitDetection = serde_json::from_str(&text).unwrap();
    assert_eq!(back.certificate().unwrap(), g);

    let ch = make_chain(&op, &SeminormFamily::RapidDecrease, &SeqVec::basis(0), 10, 2, 0.005, 1, &ChainOptions::default())
        .unwrap();
    let back: Pseudotrajectory = serde_json::from_str(&serde_json::to_string(&ch).unwrap()).unwrap();
    assert_eq!(back, ch);
    back.verify_defects().unwrap();
}

#[test]
fn wide_values_are_exact() {
    let a = WideVec::from(&seq(&[(0, 0.1)]));
    let b = a.add(&a).add(&a);
    // 0.1 + 0.1 + 0.1 in f64 is 0.30000000000000004; the wide sum is exact and rounds back to it only on output.
    assert_eq!(b.coeff(0), Some(&(wide(0.1) + wide(0.1) + wide(0.1))));
    assert!(b.sub(&a).sub(&a).sub(&a).is_zero());
}

#[test]
fn cert_for_other_operator_rejected() {
    let g = cert(&split_shift(0.25), &SeminormFamily::RapidDecrease, &[1]);
    let other = split_shift(0.5);
    let ch = make_chain(&other, &SeminormFamily::RapidDecrease, &SeqVec::basis(0), 3, 1, 0.01, 0, &ChainOptions::default())
        .unwrap();
    assert!(matches!(shadow_finite(&ch, &g, &other), Err(Error::CertificateMismatch(_))));
}
