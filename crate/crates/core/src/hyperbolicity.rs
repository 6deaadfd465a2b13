//! Generalized-hyperbolic splittings of weighted shifts, their `(β, c, t, d)` certificates,
//! and expansivity classification.
//!
//! Every splitting here is a coordinate splitting `X = M ⊕ N`, so the canonical projections
//! are seminorm-nonexpanding for the (solid) supported families and `d = 1`.

use serde::{Deserialize, Serialize};
use schemars::JsonSchema;

use crate::operators::{
    matrix_growth, Direction, Operator, ShiftOperator, Side, TailGrowth, TailRule, WeightSequence,
    MultiplicationOperator,
};
use crate::spaces::{Exponent, KotheMatrix, SeminormFamily, SeqVec};
use crate::{Error, Result};

/// Which coordinates the stable part `M` occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StableSide {
    /// `M = {j ≥ boundary}`, `N = {j < boundary}`.
    Upper,
    /// `M = {j < boundary}`, `N = {j ≥ boundary}`.
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Splitting {
    /// `M = X`, `N = {0}`.
    Stable,
    /// `M = {0}`, `N = X`.
    Unstable,
    Coordinate { boundary: i64, stable_side: StableSide },
}

impl Splitting {
    pub fn in_m(&self, j: i64) -> bool {
        match *self {
            Splitting::Stable => true,
            Splitting::Unstable => false,
            Splitting::Coordinate { boundary, stable_side: StableSide::Upper } => j >= boundary,
            Splitting::Coordinate { boundary, stable_side: StableSide::Lower } => j < boundary,
        }
    }

    pub fn in_n(&self, j: i64) -> bool {
        !self.in_m(j)
    }

    pub fn project_m(&self, x: &SeqVec) -> SeqVec {
        x.restrict(|j| self.in_m(j))
    }

    pub fn project_n(&self, x: &SeqVec) -> SeqVec {
        x.restrict(|j| self.in_n(j))
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, Splitting::Stable | Splitting::Unstable)
    }
}

/// `(GH3)` at grade `α = grade`: `‖T^n y‖_α ≤ c t^n ‖y‖_β` on `M`, same for `S^n` on `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GradeConstants {
    pub grade: usize,
    pub beta: usize,
    pub c: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GHCertificate {
    pub operator: Operator,
    pub family: SeminormFamily,
    pub splitting: Splitting,
    /// Geometric rate before any damping.
    pub rate: f64,
    pub d: f64,
    pub trivial_splitting: bool,
    /// Both `M` and `N` are `T`-invariant.
    pub hyperbolic: bool,
    pub grade_constants: Vec<GradeConstants>,
    /// Rules and scans the constants came from.
    pub provenance: Vec<String>,
}

impl GHCertificate {
    pub fn constants(&self, grade: usize) -> Result<GradeConstants> {
        self.grade_constants
            .iter()
            .find(|g| g.grade == grade)
            .copied()
            .ok_or(Error::Grade { grade, max: self.grade_constants.iter().map(|g| g.grade).max() })
    }

    /// Largest `c` and `t` over all grades, for truncation rules that must serve every grade.
    pub fn worst_constants(&self) -> (f64, f64) {
        self.grade_constants.iter().fold((0.0_f64, 0.0_f64), |(c, t), g| (c.max(g.c), t.max(g.t)))
    }

    pub fn check_operator(&self, op: &Operator) -> Result<()> {
        if &self.operator != op {
            return Err(Error::CertificateMismatch("certificate was issued for a different operator".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum SplitDetection {
    Certificate(GHCertificate),
    NoCertificate { reason: String },
}

impl SplitDetection {
    pub fn certificate(self) -> Result<GHCertificate> {
        match self {
            SplitDetection::Certificate(c) => Ok(c),
            SplitDetection::NoCertificate { reason } => Err(Error::NoCertificate(reason)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Regime {
    Contracting,
    Expanding,
    Neutral,
}

fn regime(v: f64) -> Regime {
    if v < 1.0 {
        Regime::Contracting
    } else if v > 1.0 {
        Regime::Expanding
    } else {
        Regime::Neutral
    }
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Contracting => "|w| < 1",
        Regime::Expanding => "|w| > 1",
        Regime::Neutral => "|w| = 1",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Boundary {
    AllUpper,
    AllLower,
    /// Upper regime on `[s, ∞)`, lower regime on `(−∞, s−2]`, `s−1` free.
    At(i64),
}

/// Locates a single switch for the forward orientation: `upper` multipliers on `[s, ∞)` and
/// `lower` multipliers on `(−∞, s−2]`.
fn find_boundary(w: &WeightSequence, upper: Regime, lower: Regime) -> std::result::Result<Boundary, String> {
    let win = w.analysis_window();
    let (l, r) = (win.lo(), win.hi());
    let tail_regime = |a: Option<i64>, b: Option<i64>| {
        let e = w.abs_extrema(a, b).expect("tail ranges are nonempty");
        if e.sup < 1.0 {
            Regime::Contracting
        } else if e.inf > 1.0 {
            Regime::Expanding
        } else {
            Regime::Neutral
        }
    };
    let rt = tail_regime(Some(r + 1), None);
    let lt = tail_regime(None, Some(l - 1));
    let m = |j: i64| regime(w.value(j).abs());
    if rt == Regime::Neutral {
        return Err("|w_j| = 1 (or accumulates at 1) on the right tail".into());
    }
    if lt == Regime::Neutral {
        return Err("|w_j| = 1 (or accumulates at 1) on the left tail".into());
    }
    if rt == upper {
        let mut s = r + 1;
        while s > l && m(s - 1) == upper {
            s -= 1;
        }
        if s == l && lt == upper {
            return Ok(Boundary::AllUpper);
        }
        if lt != lower {
            return Err(format!(
                "regime switches more than once: {} on both tails with a different core",
                regime_name(upper)
            ));
        }
        if let Some(i) = (l..=s - 2).find(|&i| m(i) != lower) {
            return Err(format!(
                "weight at index {i} has {} inside the {} region; more than one regime switch",
                regime_name(m(i)),
                regime_name(lower)
            ));
        }
        Ok(Boundary::At(s))
    } else {
        if lt != lower {
            return Err(format!(
                "{} ahead of {} in the shift direction: no invariant splitting of this orientation",
                regime_name(lt),
                regime_name(rt)
            ));
        }
        if let Some(i) = (l..=r).find(|&i| m(i) != lower) {
            return Err(format!("weight at index {i} has {}; more than one regime switch", regime_name(m(i))));
        }
        Ok(Boundary::AllLower)
    }
}

/// Weights seen in forward orientation (backward shifts are reflected `j ↦ −j`).
fn forward_view(op: &ShiftOperator) -> WeightSequence {
    match op.direction {
        Direction::Forward => op.weights.clone(),
        Direction::Backward => op.weights.reflected(),
    }
}

/// Maps a forward-orientation boundary back to original coordinates.
fn orient(op: &ShiftOperator, b: Boundary) -> Splitting {
    match (b, op.direction) {
        (Boundary::AllUpper, _) => Splitting::Stable,
        (Boundary::AllLower, _) => Splitting::Unstable,
        (Boundary::At(s), Direction::Forward) => Splitting::Coordinate { boundary: s, stable_side: StableSide::Upper },
        (Boundary::At(s), Direction::Backward) => {
            Splitting::Coordinate { boundary: 1 - s, stable_side: StableSide::Lower }
        }
    }
}

/// `(sup |w| on the upper region, inf |w| on the lower region)` in forward orientation.
fn region_extrema(w: &WeightSequence, b: Boundary) -> (Option<f64>, Option<f64>) {
    let (up, low) = match b {
        Boundary::AllUpper => (Some((None, None)), None),
        Boundary::AllLower => (None, Some((None, None))),
        Boundary::At(s) => (Some((Some(s), None)), Some((None, Some(s - 2)))),
    };
    let up = up.and_then(|(a, z)| w.abs_extrema(a, z));
    let low = low.and_then(|(a, z)| w.abs_extrema(a, z));
    (up.map(|e| e.sup), low.map(|e| e.inf))
}

enum GradeRule {
    /// Norm is translation invariant: `c = 1`, `t = rate`.
    Flat,
    /// `(|j|+1)^k` weights: `t = √rate`, `c_k = sup_n (n+1)^k t^n`.
    Polynomial,
}

fn grade_rule(fam: &SeminormFamily, op: &Operator) -> std::result::Result<GradeRule, String> {
    if matches!(op, Operator::Scale { .. }) {
        return Ok(GradeRule::Flat);
    }
    match fam.as_kothe().0.as_ref() {
        KotheMatrix::Constant { .. } => Ok(GradeRule::Flat),
        KotheMatrix::PolynomialGrade => Ok(GradeRule::Polynomial),
        other => Err(format!("no certificate rule for Köthe matrix {}", matrix_kind(other))),
    }
}

fn matrix_kind(a: &KotheMatrix) -> &'static str {
    match a {
        KotheMatrix::Constant { .. } => "constant",
        KotheMatrix::PolynomialGrade => "polynomial_grade",
        KotheMatrix::BandIndicator { .. } => "band_indicator",
        KotheMatrix::Table { .. } => "table",
        KotheMatrix::WeightedConstant { .. } => "weighted_constant",
    }
}

/// `sup_{n ≥ 0} (n+1)^k t^n`, scanning until the ratio `((n+2)/(n+1))^k t` drops below 1.
pub fn polynomial_damping_constant(k: usize, t: f64) -> f64 {
    assert!(t > 0.0 && t < 1.0, "rate must lie in (0, 1)");
    let mut best: f64 = 1.0;
    let mut n = 0u64;
    loop {
        let ratio = ((n as f64 + 2.0) / (n as f64 + 1.0)).powi(k as i32) * t;
        if ratio < 1.0 {
            return best;
        }
        n += 1;
        best = best.max((n as f64 + 1.0).powi(k as i32) * t.powi(n as i32));
    }
}

fn check_grades(grades: &[usize], fam: &SeminormFamily) -> Result<()> {
    if grades.is_empty() {
        return Err(Error::Parameter("grade list is empty".into()));
    }
    for &k in grades {
        if k == 0 || fam.max_grade().is_some_and(|m| k > m) {
            return Err(Error::Grade { grade: k, max: fam.max_grade() });
        }
    }
    Ok(())
}

/// Detects a coordinate GH splitting and its per-grade constants.
pub fn detect_split(op: &Operator, fam: &SeminormFamily, grades: &[usize]) -> Result<SplitDetection> {
    fam.check()?;
    op.check()?;
    check_grades(grades, fam)?;
    let no = |reason: String| Ok(SplitDetection::NoCertificate { reason });
    let rule = match grade_rule(fam, op) {
        Ok(r) => r,
        Err(e) => return no(e),
    };
    let mut provenance = Vec::new();
    let (splitting, rate) = match op {
        Operator::Scale { factor } => {
            let a = factor.abs();
            match regime(a) {
                Regime::Neutral => return no("|factor| = 1: no contraction on either side".into()),
                Regime::Contracting => {
                    provenance.push(format!("scalar multiple: t = |factor| = {a}"));
                    (Splitting::Stable, a)
                }
                Regime::Expanding => {
                    provenance.push(format!("scalar multiple: t = 1/|factor| = {}", 1.0 / a));
                    (Splitting::Unstable, 1.0 / a)
                }
            }
        }
        Operator::Shift(s) => {
            let w = forward_view(s);
            let b = match find_boundary(&w, Regime::Contracting, Regime::Expanding) {
                Ok(b) => b,
                Err(e) => return no(e),
            };
            let (sup_m, inf_n) = region_extrema(&w, b);
            let rate = sup_m.unwrap_or(0.0).max(inf_n.map_or(0.0, |v| 1.0 / v));
            if !(rate > 0.0 && rate < 1.0) {
                return no(format!("contraction rate {rate} is not in (0, 1)"));
            }
            let win = w.analysis_window();
            provenance.push(format!(
                "regime scan over [{}, {}] (forward orientation) with analytic tails",
                win.lo(),
                win.hi()
            ));
            if let Some(v) = sup_m {
                provenance.push(format!("sup |w| on stable region = {v}"));
            }
            if let Some(v) = inf_n {
                provenance.push(format!("inf |w| on unstable region (free index excluded) = {v}"));
            }
            (orient(s, b), rate)
        }
    };
    let mut grade_constants = Vec::new();
    for &k in grades {
        let (c, t) = match rule {
            GradeRule::Flat => (1.0, rate),
            GradeRule::Polynomial => {
                let t = rate.sqrt();
                (polynomial_damping_constant(k, t), t)
            }
        };
        grade_constants.push(GradeConstants { grade: k, beta: k, c, t });
    }
    provenance.push(match rule {
        GradeRule::Flat => "translation-invariant norm: c = 1, t = rate, beta = alpha".to_string(),
        GradeRule::Polynomial => {
            "polynomial grades: t = sqrt(rate), c_k = sup_n (n+1)^k t^n by finite scan, beta = alpha".to_string()
        }
    });
    provenance.push("coordinate projections on a solid family: d = 1".into());
    let trivial = splitting.is_trivial();
    Ok(SplitDetection::Certificate(GHCertificate {
        operator: op.clone(),
        family: fam.clone(),
        splitting,
        rate,
        d: 1.0,
        trivial_splitting: trivial,
        // A shift maps the boundary coordinate across the split, so only trivial splits are invariant.
        hyperbolic: trivial,
        grade_constants,
        provenance,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaMode {
    /// Finite and periodic chains: `(1−t)ε/(3cd)`.
    Finite,
    Periodic,
    /// Two-sided segments; `inverse_bound` bounds `‖T⁻¹‖` so backward defects stay below `3cd`.
    TwoSided { inverse_bound: f64 },
    /// Perturbations for the conjugacy construction: `(1−t)ε/(2cd)`.
    Conjugacy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DeltaChoice {
    pub input_grade: usize,
    pub delta: f64,
}

pub fn delta_for_epsilon(cert: &GHCertificate, epsilon: f64, alpha: usize, mode: DeltaMode) -> Result<DeltaChoice> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let g = cert.constants(alpha)?;
    let base = (1.0 - g.t) * epsilon / (g.c * cert.d);
    let delta = match mode {
        DeltaMode::Finite | DeltaMode::Periodic => base / 3.0,
        DeltaMode::Conjugacy => base / 2.0,
        DeltaMode::TwoSided { inverse_bound } => {
            if !(inverse_bound.is_finite() && inverse_bound >= 1.0) {
                return Err(Error::Parameter(format!("inverse bound must be >= 1, got {inverse_bound}")));
            }
            base / (3.0 * inverse_bound)
        }
    };
    Ok(DeltaChoice { input_grade: g.beta, delta })
}

/// Operator seminorm bound `sup ‖Tx‖_k/‖x‖_k` (or of `T⁻¹`), when one is available in closed form.
pub fn op_norm_bound(op: &Operator, fam: &SeminormFamily, k: usize, inverse: bool) -> Option<f64> {
    match op {
        Operator::Scale { factor } => Some(if inverse { 1.0 / factor.abs() } else { factor.abs() }),
        Operator::Shift(s) => {
            let e = s.weights.abs_extrema(None, None)?;
            let w = if inverse { 1.0 / e.inf } else { e.sup };
            let factor = match fam.as_kothe().0.as_ref() {
                KotheMatrix::Constant { .. } => 1.0,
                KotheMatrix::PolynomialGrade => 2f64.powi(k as i32),
                _ => return None,
            };
            let b = w * factor;
            b.is_finite().then_some(b)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ExpansivityKind {
    NotExpansive,
    PositivelyExpansiveForward,
    PositivelyExpansiveInverse,
    Both,
    /// Expansive without either one-sided orbit condition (hyperbolic with a nontrivial split).
    TopologicallyExpansive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    /// Tail rules force `sup = ∞`.
    Diverges,
    /// Tail rules force `sup < ∞`.
    Bounded,
    DivergesWithinHorizon,
    BoundedWithinHorizon,
    Inconclusive,
}

impl BranchStatus {
    fn diverging(self) -> bool {
        matches!(self, BranchStatus::Diverges | BranchStatus::DivergesWithinHorizon)
    }

    fn analytic(self) -> bool {
        matches!(self, BranchStatus::Diverges | BranchStatus::Bounded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BranchEvidence {
    pub grade: usize,
    pub status: BranchStatus,
    pub argument: String,
    /// `(n, log10 g_n)` samples of the orbit quantity.
    pub trace: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExpansivityVerdict {
    pub kind: ExpansivityKind,
    pub witness_grade: Option<usize>,
    /// Branch (a): `sup_n ‖T^n e_1‖_k`.
    pub forward: Vec<BranchEvidence>,
    /// Branch (b): `sup_n ‖T^{−n} e_1‖_k`.
    pub backward: Vec<BranchEvidence>,
    /// Every branch decided from tail rules.
    pub conclusive: bool,
}

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e12;

pub fn classify_expansivity_shift(
    op: &ShiftOperator,
    fam: &SeminormFamily,
    grades: &[usize],
    horizon: u64,
) -> Result<ExpansivityVerdict> {
    fam.check()?;
    check_grades(grades, fam)?;
    let (a, _) = fam.as_kothe();
    classify_branches(op, a.as_ref(), grades, horizon)
}

/// Forward shift `F_w` on `λ_p(A, ℤ)`.
pub fn classify_expansivity_kothe(
    w: &WeightSequence,
    a: &KotheMatrix,
    p: f64,
    grades: &[usize],
    horizon: u64,
) -> Result<ExpansivityVerdict> {
    let fam = SeminormFamily::KothePrimary { matrix: a.clone(), p };
    classify_expansivity_shift(&ShiftOperator::forward(w.clone()), &fam, grades, horizon)
}

fn classify_branches(op: &ShiftOperator, a: &KotheMatrix, grades: &[usize], horizon: u64) -> Result<ExpansivityVerdict> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for &k in grades {
        forward.push(branch(op, a, k, horizon, false)?);
        backward.push(branch(op, a, k, horizon, true)?);
    }
    let fwd = forward.iter().find(|b| b.status.diverging()).map(|b| b.grade);
    let bwd = backward.iter().find(|b| b.status.diverging()).map(|b| b.grade);
    let kind = match (fwd, bwd) {
        (Some(_), Some(_)) => ExpansivityKind::Both,
        (Some(_), None) => ExpansivityKind::PositivelyExpansiveForward,
        (None, Some(_)) => ExpansivityKind::PositivelyExpansiveInverse,
        (None, None) => ExpansivityKind::NotExpansive,
    };
    let conclusive = forward.iter().chain(&backward).all(|b| b.status.analytic());
    Ok(ExpansivityVerdict { kind, witness_grade: fwd.or(bwd), forward, backward, conclusive })
}

/// One orbit branch of `e_1`: `inverse = false` follows `T^n`, `true` follows `T^{−n}`.
fn branch(op: &ShiftOperator, a: &KotheMatrix, k: usize, horizon: u64, inverse: bool) -> Result<BranchEvidence> {
    let sigma = op.direction.sigma() * if inverse { -1 } else { 1 };
    let side = if sigma > 0 { Side::Right } else { Side::Left };
    let tail = match side {
        Side::Left => op.weights.left_tail(),
        Side::Right => op.weights.right_tail(),
    };
    let trace = orbit_trace(op, a, k, horizon, inverse);
    let decided = match matrix_growth(a, k, side) {
        TailGrowth::Zero => Some((false, "matrix vanishes beyond a finite band: finitely many nonzero terms".to_string())),
        TailGrowth::Unknown => None,
        TailGrowth::Power(ea) => {
            let sign = if inverse { -1.0 } else { 1.0 };
            Some(match tail {
                TailRule::PowerLaw { exponent, .. } => {
                    let e = sign * exponent;
                    if e > 0.0 {
                        (true, format!("weight products grow like (n!)^{e} and dominate |j|^{ea}"))
                    } else if e < 0.0 {
                        (false, format!("weight products decay like (n!)^{e} and dominate |j|^{ea}"))
                    } else {
                        (ea > 0.0, format!("unit power-law tail; matrix grows like |j|^{ea}"))
                    }
                }
                TailRule::Constant { value } => {
                    let rho = value.abs().powf(sign);
                    if rho > 1.0 {
                        (true, format!("geometric factor {rho}^n beats |j|^{ea}"))
                    } else if rho < 1.0 {
                        (false, format!("geometric factor {rho}^n beats |j|^{ea}"))
                    } else {
                        (ea > 0.0, format!("unit geometric factor; matrix grows like |j|^{ea}"))
                    }
                }
            })
        }
    };
    let (status, argument) = match decided {
        Some((true, arg)) => (BranchStatus::Diverges, arg),
        Some((false, arg)) => (BranchStatus::Bounded, arg),
        None => {
            let t = trace.as_ref().map_err(|e| e.clone());
            match t {
                Ok(tr) => numeric_status(tr),
                Err(e) => (BranchStatus::Inconclusive, format!("scan stopped: {e}")),
            }
        }
    };
    let samples = match trace {
        Ok(t) => sample_trace(&t),
        Err(_) => Vec::new(),
    };
    Ok(BranchEvidence { grade: k, status, argument, trace: samples })
}

/// `log10 ‖T^{±n} e_1‖_k` for `n = 0..=horizon`, computed in log space.
fn orbit_trace(op: &ShiftOperator, a: &KotheMatrix, k: usize, horizon: u64, inverse: bool) -> Result<Vec<f64>> {
    let s = op.direction.sigma();
    let mut idx: i64 = 1;
    let mut log_prod = 0.0_f64;
    let mut out = Vec::with_capacity(horizon as usize + 1);
    out.push(a.entry(idx, k)?.log10());
    for _ in 0..horizon {
        if inverse {
            let w = op.weights.weight(idx - s)?;
            log_prod -= w.abs().log10();
            idx -= s;
        } else {
            let w = op.weights.weight(idx)?;
            log_prod += w.abs().log10();
            idx += s;
        }
        out.push(log_prod + a.entry(idx, k)?.log10());
    }
    Ok(out)
}

fn numeric_status(trace: &[f64]) -> (BranchStatus, String) {
    let bound = DEFAULT_DIVERGENCE_BOUND.log10();
    let n = trace.len() - 1;
    if let Some(i) = trace.iter().position(|v| *v >= bound) {
        return (BranchStatus::DivergesWithinHorizon, format!("exceeds {DEFAULT_DIVERGENCE_BOUND:e} at n = {i}"));
    }
    let half = n / 2;
    let first = trace[..=half].iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let all = trace.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if all <= first {
        (BranchStatus::BoundedWithinHorizon, format!("max 10^{all:.3} reached in the first half of n <= {n}"))
    } else {
        (BranchStatus::Inconclusive, format!("still growing at the horizon n = {n}"))
    }
}

fn sample_trace(t: &[f64]) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut n = 1usize;
    while n < t.len() {
        out.push((n as u64, t[n]));
        n *= 2;
    }
    if t.len() > 1 && out.last().map(|p| p.0) != Some(t.len() as u64 - 1) {
        out.push((t.len() as u64 - 1, t[t.len() - 1]));
    }
    out
}

/// Expansivity implied by a certificate: a hyperbolic operator is expansive, with the
/// one-sided kinds for trivial splits; a non-hyperbolic GH operator is not.
pub fn classify_from_certificate(cert: &GHCertificate) -> ExpansivityKind {
    match (cert.hyperbolic, cert.splitting) {
        (false, _) => ExpansivityKind::NotExpansive,
        (true, Splitting::Unstable) => ExpansivityKind::PositivelyExpansiveForward,
        (true, Splitting::Stable) => ExpansivityKind::PositivelyExpansiveInverse,
        (true, Splitting::Coordinate { .. }) => ExpansivityKind::TopologicallyExpansive,
    }
}

/// Direct orbit measurement of a concrete vector, in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OrbitScan {
    pub grade: usize,
    pub horizon: u64,
    pub inverse: bool,
    /// Largest `log10 ‖T^{±n} x‖_k` seen; `None` if every iterate vanished in this seminorm.
    pub max_log10: Option<f64>,
    /// First `n` with `‖T^{±n} x‖_k ≥ bound`.
    pub first_exceed: Option<u64>,
    /// The last ten values coincide exactly.
    pub eventually_constant: bool,
}

pub fn orbit_growth_scan(
    op: &Operator,
    fam: &SeminormFamily,
    x: &SeqVec,
    k: usize,
    horizon: u64,
    inverse: bool,
    bound: f64,
) -> Result<OrbitScan> {
    let mut v = x.clone();
    let mut log_scale = 0.0_f64;
    let lb = bound.log10();
    let mut max_log10 = f64::NEG_INFINITY;
    let mut first_exceed = None;
    let mut last = Vec::with_capacity(horizon as usize);
    for n in 1..=horizon {
        let m = v.max_abs();
        if m > 1e100 || (m > 0.0 && m < 1e-100) {
            v = v.scaled(1.0 / m)?;
            log_scale += m.log10();
        }
        v = if inverse { op.apply_inverse(&v)? } else { op.apply(&v)? };
        let nv = fam.eval(&v, k)?;
        let l = nv.log10() + log_scale;
        max_log10 = max_log10.max(l);
        if first_exceed.is_none() && l >= lb {
            first_exceed = Some(n);
        }
        last.push(l);
    }
    let eventually_constant = last.len() >= 10 && last[last.len() - 10..].windows(2).all(|p| p[0] == p[1]);
    let max_log10 = max_log10.is_finite().then_some(max_log10);
    Ok(OrbitScan { grade: k, horizon, inverse, max_log10, first_exceed, eventually_constant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum MultiplicationVerdict {
    Hyperbolic {
        /// `A = {|φ| < 1}`.
        contracting: Vec<String>,
        /// `B = {|φ| > 1}`.
        expanding: Vec<String>,
        /// `t = max(max_{K∩A} |φ|, max_{K∩B} 1/|φ|)` per compact.
        t: Vec<f64>,
    },
    Fails {
        sites: Vec<String>,
    },
}

/// Hyperbolicity of `M_φ` on the grid; an empty compact list means the whole grid.
pub fn classify_multiplication(op: &MultiplicationOperator, compacts: &[Vec<String>]) -> Result<MultiplicationVerdict> {
    op.check()?;
    let bad: Vec<String> =
        op.sites.iter().filter(|s| s.modulus == 1.0).map(|s| s.label.clone()).collect();
    if !bad.is_empty() {
        return Ok(MultiplicationVerdict::Fails { sites: bad });
    }
    let all: Vec<String> = op.sites.iter().map(|s| s.label.clone()).collect();
    let compacts: Vec<Vec<String>> = if compacts.is_empty() { vec![all] } else { compacts.to_vec() };
    let mut t = Vec::with_capacity(compacts.len());
    for k in &compacts {
        if k.is_empty() {
            return Err(Error::Parameter("empty compact set".into()));
        }
        let mut tk: f64 = 0.0;
        for label in k {
            let i = op.site_index(label).ok_or_else(|| Error::Parameter(format!("unknown site {label:?}")))?;
            let m = op.sites[i].modulus;
            tk = tk.max(if m < 1.0 { m } else { 1.0 / m });
        }
        t.push(tk);
    }
    Ok(MultiplicationVerdict::Hyperbolic {
        contracting: op.sites.iter().filter(|s| s.modulus < 1.0).map(|s| s.label.clone()).collect(),
        expanding: op.sites.iter().filter(|s| s.modulus > 1.0).map(|s| s.label.clone()).collect(),
        t,
    })
}

/// Growth constants: `‖T^n x‖_k ≥ κ λ^n ‖P_N x‖_k` and `‖T^{−n} x‖_k ≥ κ λ^n ‖P_M x‖_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GrowthConstants {
    pub grade: usize,
    pub kappa: f64,
    pub lambda: f64,
}

/// Splitting into a forward-growing part `N` and a backward-growing part `M` (same `M`/`N`
/// convention as [`GHCertificate`], with growth in place of contraction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExpansionCertificate {
    pub operator: Operator,
    pub family: SeminormFamily,
    pub splitting: Splitting,
    pub grade_constants: Vec<GrowthConstants>,
    pub provenance: Vec<String>,
}

impl ExpansionCertificate {
    pub fn constants(&self, grade: usize) -> Result<GrowthConstants> {
        self.grade_constants
            .iter()
            .find(|g| g.grade == grade)
            .copied()
            .ok_or(Error::Grade { grade, max: self.grade_constants.iter().map(|g| g.grade).max() })
    }

    /// From a hyperbolic GH certificate: `κ = 1/(cd)`, `λ = 1/t`.
    pub fn from_hyperbolic(cert: &GHCertificate) -> Result<ExpansionCertificate> {
        if !cert.hyperbolic {
            return Err(Error::NoCertificate("certificate is not hyperbolic".into()));
        }
        Ok(ExpansionCertificate {
            operator: cert.operator.clone(),
            family: cert.family.clone(),
            splitting: cert.splitting,
            grade_constants: cert
                .grade_constants
                .iter()
                .map(|g| GrowthConstants { grade: g.grade, kappa: 1.0 / (g.c * cert.d), lambda: 1.0 / g.t })
                .collect(),
            provenance: vec!["hyperbolic certificate: kappa = 1/(c d), lambda = 1/t".into()],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum GrowthDetection {
    Certificate(ExpansionCertificate),
    NoCertificate { reason: String },
}

/// Finds a coordinate splitting on which the shift grows forward on `N` and backward on `M`.
pub fn detect_growth_split(op: &Operator, fam: &SeminormFamily, grades: &[usize]) -> Result<GrowthDetection> {
    fam.check()?;
    op.check()?;
    check_grades(grades, fam)?;
    let no = |reason: String| Ok(GrowthDetection::NoCertificate { reason });
    let (splitting, lambda) = match op {
        Operator::Scale { factor } => {
            let a = factor.abs();
            match regime(a) {
                Regime::Neutral => return no("|factor| = 1".into()),
                Regime::Expanding => (Splitting::Unstable, a),
                Regime::Contracting => (Splitting::Stable, 1.0 / a),
            }
        }
        Operator::Shift(s) => {
            let w = forward_view(s);
            let b = match find_boundary(&w, Regime::Expanding, Regime::Contracting) {
                Ok(b) => b,
                Err(e) => return no(e),
            };
            let (inf_up, sup_low) = {
                let (up, low) = match b {
                    Boundary::AllUpper => (Some((None, None)), None),
                    Boundary::AllLower => (None, Some((None, None))),
                    Boundary::At(s) => (Some((Some(s), None)), Some((None, Some(s - 2)))),
                };
                (
                    up.and_then(|(a, z)| w.abs_extrema(a, z)).map(|e| e.inf),
                    low.and_then(|(a, z)| w.abs_extrema(a, z)).map(|e| e.sup),
                )
            };
            let lambda = inf_up.unwrap_or(f64::INFINITY).min(sup_low.map_or(f64::INFINITY, |v| 1.0 / v));
            if !(lambda > 1.0 && lambda.is_finite()) {
                return no(format!("growth rate {lambda} is not in (1, ∞)"));
            }
            // Growth on N is "unstable" for T, i.e. the GH roles with M and N swapped.
            let split = match b {
                Boundary::AllUpper => Splitting::Unstable,
                Boundary::AllLower => Splitting::Stable,
                Boundary::At(s) => Splitting::Coordinate { boundary: s, stable_side: StableSide::Lower },
            };
            let split = match (s.direction, split) {
                (Direction::Backward, Splitting::Coordinate { boundary, .. }) => {
                    Splitting::Coordinate { boundary: 1 - boundary, stable_side: StableSide::Upper }
                }
                (_, sp) => sp,
            };
            (split, lambda)
        }
    };
    let poly = match (op, fam.as_kothe().0.as_ref()) {
        (Operator::Scale { .. }, _) | (_, KotheMatrix::Constant { .. }) => false,
        (_, KotheMatrix::PolynomialGrade) => true,
        (_, other) => return no(format!("no growth rule for Köthe matrix {}", matrix_kind(other))),
    };
    let mut provenance = vec![format!("lambda = {lambda} from analytic weight extrema")];
    let mut grade_constants = Vec::with_capacity(grades.len());
    for &k in grades {
        let kappa = if poly {
            match polynomial_kappa(&splitting, k) {
                Some(v) => v,
                None => return no("polynomial grades with a whole-line growth region: no uniform kappa".into()),
            }
        } else {
            1.0
        };
        grade_constants.push(GrowthConstants { grade: k, kappa, lambda });
    }
    provenance.push(if poly {
        "polynomial grades: kappa = min ratio (|j'|+1)^k/(|j|+1)^k along the growing direction".into()
    } else {
        "translation-invariant norm: kappa = 1".into()
    });
    Ok(GrowthDetection::Certificate(ExpansionCertificate {
        operator: op.clone(),
        family: fam.clone(),
        splitting,
        grade_constants,
        provenance,
    }))
}

/// Worst ratio `a_{j',k}/a_{j,k}` when mass moves away from its growing region's edge.
fn polynomial_kappa(split: &Splitting, k: usize) -> Option<f64> {
    // Forward-growing N moves mass away from the boundary, backward-growing M likewise;
    // the ratio drops below 1 only when the path crosses the origin.
    let Splitting::Coordinate { boundary, stable_side } = *split else {
        // Whole line: orbits starting far out cross the origin.
        return None;
    };
    let edge_n = match stable_side {
        StableSide::Lower => boundary,
        StableSide::Upper => boundary - 1,
    };
    let edge_m = match stable_side {
        StableSide::Lower => boundary - 1,
        StableSide::Upper => boundary,
    };
    // N grows away from edge_n toward ±∞ and M away from edge_m in the opposite direction;
    // crossing the origin costs at most (|edge|+1)^k.
    let cross = |edge: i64, toward_positive: bool| {
        let crosses = if toward_positive { edge < 0 } else { edge > 0 };
        if crosses {
            ((edge.unsigned_abs() + 1) as f64).powi(-(k as i32))
        } else {
            1.0
        }
    };
    let n_positive = matches!(stable_side, StableSide::Lower);
    Some(cross(edge_n, n_positive).min(cross(edge_m, !n_positive)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSide {
    /// `‖P_N x‖ ≥ 1/2`: forward bound checked.
    A,
    /// Otherwise `‖P_M x‖ ≥ 1/2`: backward bound checked.
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WitnessSample {
    pub side: WitnessSide,
    pub projection_norm: f64,
    pub grown_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WitnessReport {
    pub grade: usize,
    pub n: u64,
    pub kappa: f64,
    pub lambda: f64,
    pub bound: f64,
    pub samples: Vec<WitnessSample>,
    pub all_hold: bool,
}

/// Checks `‖T^n x‖_k ≥ κλ^n/2` (side A) or `‖T^{−n} x‖_k ≥ κλ^n/2` (side B) on unit samples.
pub fn uniform_expansivity_witness(
    cert: &ExpansionCertificate,
    op: &Operator,
    grade: usize,
    samples: &[SeqVec],
    n: u64,
) -> Result<WitnessReport> {
    if &cert.operator != op {
        return Err(Error::CertificateMismatch("expansion certificate was issued for a different operator".into()));
    }
    let g = cert.constants(grade)?;
    let bound = g.kappa * g.lambda.powi(n as i32) / 2.0;
    let fam = &cert.family;
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let norm = fam.eval(x, grade)?;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotUnit { norm });
        }
        let pn = fam.eval(&cert.splitting.project_n(x), grade)?;
        let (side, proj, grown) = if pn >= 0.5 {
            (WitnessSide::A, pn, fam.eval(&op.iterate(x, n as i64)?, grade)?)
        } else {
            let pm = fam.eval(&cert.splitting.project_m(x), grade)?;
            (WitnessSide::B, pm, fam.eval(&op.iterate(x, -(n as i64))?, grade)?)
        };
        out.push(WitnessSample { side, projection_norm: proj, grown_norm: grown, bound, holds: grown >= bound });
    }
    let all_hold = out.iter().all(|s| s.holds);
    Ok(WitnessReport { grade, n, kappa: g.kappa, lambda: g.lambda, bound, samples: out, all_hold })
}

/// Least `|n| ≤ horizon` with `‖T^n x‖_k ≥ 2‖x‖_k` (positive `n` tried first).
pub fn orbit_doubling_check(op: &Operator, x: &SeqVec, fam: &SeminormFamily, k: usize, horizon: u64) -> Result<Option<i64>> {
    let base = fam.eval(x, k)?;
    if base == 0.0 {
        return Err(Error::ZeroSeminorm);
    }
    let mut f = x.clone();
    let mut b = x.clone();
    for n in 1..=horizon as i64 {
        f = op.apply(&f)?;
        if fam.eval(&f, k)? >= 2.0 * base {
            return Ok(Some(n));
        }
        b = op.apply_inverse(&b)?;
        if fam.eval(&b, k)? >= 2.0 * base {
            return Ok(Some(-n));
        }
    }
    Ok(None)
}

/// Exponent of the Köthe family, for reports.
pub fn family_exponent(fam: &SeminormFamily) -> Option<f64> {
    match fam.as_kothe().1 {
        Exponent::Sup => None,
        Exponent::Finite(p) => Some(p),
    }
}
