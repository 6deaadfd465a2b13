//! Bilateral weighted shifts, scalar multiples of the identity and grid-sampled
//! multiplication operators.
//!
//! A shift moves `e_j ↦ w_j e_{j+σ}` with `σ = +1` (forward, `F_w`) or `σ = −1` (backward,
//! `B_w`); in coordinates `(F_w x)_n = w_{n−1} x_{n−1}` and `(B_w x)_n = w_{n+1} x_{n+1}`.

use std::borrow::Cow;
use std::collections::BTreeMap;

use schemars::{JsonSchema, Schema, SchemaGenerator};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::spaces::{IndexWindow, KotheMatrix, SeqVec};
use crate::{Error, Result};

/// Weight rule outside the explicit table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailRule {
    Constant { value: f64 },
    /// `w_j = (|j − offset| + 1)^exponent`.
    PowerLaw {
        exponent: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        offset: i64,
    },
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

impl TailRule {
    pub fn value(&self, j: i64) -> f64 {
        match *self {
            TailRule::Constant { value } => value,
            TailRule::PowerLaw { exponent, offset } => power_law(j, offset, exponent),
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            TailRule::Constant { value } if !value.is_finite() || value == 0.0 => {
                Err(Error::Weights(format!("constant tail must be finite and nonzero, got {value}")))
            }
            TailRule::PowerLaw { exponent, .. } if !exponent.is_finite() => {
                Err(Error::Weights(format!("power-law exponent must be finite, got {exponent}")))
            }
            _ => Ok(()),
        }
    }

    /// Rule for `j ↦ 1/w_{j−shift}`.
    fn reciprocal_shifted(&self, shift: i64) -> Result<TailRule> {
        match *self {
            TailRule::Constant { value } => {
                let r = 1.0 / value;
                if !r.is_finite() || r == 0.0 {
                    return Err(Error::NotInvertible(format!("reciprocal of tail value {value} is not representable")));
                }
                Ok(TailRule::Constant { value: r })
            }
            TailRule::PowerLaw { exponent, offset } => {
                Ok(TailRule::PowerLaw { exponent: -exponent, offset: offset + shift })
            }
        }
    }

    fn reflected(&self) -> TailRule {
        match *self {
            TailRule::PowerLaw { exponent, offset } => TailRule::PowerLaw { exponent, offset: -offset },
            c => c,
        }
    }

    /// Growth exponent of `|w_j|` as `|j| → ∞`.
    pub fn tail_exponent(&self) -> f64 {
        match *self {
            TailRule::Constant { .. } => 0.0,
            TailRule::PowerLaw { exponent, .. } => exponent,
        }
    }

    /// Extremes of `|value|` over `[a, b]` (unbounded ends as `None`).
    fn abs_extrema(&self, a: Option<i64>, b: Option<i64>) -> Extrema {
        match *self {
            TailRule::Constant { value } => Extrema { inf: value.abs(), sup: value.abs() },
            TailRule::PowerLaw { exponent, offset } => {
                let dist = |j: i64| (j as i128 - offset as i128).unsigned_abs();
                let inside = a.is_none_or(|a| a <= offset) && b.is_none_or(|b| offset <= b);
                let d_min = if inside {
                    0
                } else {
                    a.iter().chain(b.iter()).map(|j| dist(*j)).min().unwrap_or(0)
                };
                let d_max = match (a, b) {
                    (Some(a), Some(b)) => Some(dist(a).max(dist(b))),
                    _ => None,
                };
                let f = |d: u128| (d as f64 + 1.0).powf(exponent);
                let near = f(d_min);
                let far = match d_max {
                    Some(d) => f(d),
                    None if exponent > 0.0 => f64::INFINITY,
                    None if exponent < 0.0 => 0.0,
                    None => 1.0,
                };
                Extrema { inf: near.min(far), sup: near.max(far) }
            }
        }
    }
}

fn power_law(j: i64, offset: i64, exponent: f64) -> f64 {
    ((j as i128 - offset as i128).unsigned_abs() as f64 + 1.0).powf(exponent)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Extrema {
    pub inf: f64,
    pub sup: f64,
}

impl Extrema {
    fn merge(self, o: Extrema) -> Extrema {
        Extrema { inf: self.inf.min(o.inf), sup: self.sup.max(o.sup) }
    }
}

/// Nonzero weights: an explicit contiguous table plus tail rules on either side.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    lo: i64,
    table: Vec<f64>,
    left_tail: TailRule,
    right_tail: TailRule,
}

#[derive(Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
struct WeightSequenceJson {
    /// Core weights keyed by decimal index; the keys must be contiguous.
    table: BTreeMap<String, f64>,
    left_tail: TailRule,
    right_tail: TailRule,
}

impl WeightSequence {
    pub fn new(table: BTreeMap<i64, f64>, left_tail: TailRule, right_tail: TailRule) -> Result<Self> {
        let (Some(&lo), Some(&hi)) = (table.keys().next(), table.keys().next_back()) else {
            return Err(Error::Weights("table must be nonempty".into()));
        };
        if (hi - lo + 1) as usize != table.len() {
            return Err(Error::Weights("table indices must be contiguous".into()));
        }
        IndexWindow::new(lo, hi)?;
        if let Some((j, w)) = table.iter().find(|(_, w)| !w.is_finite() || **w == 0.0) {
            return Err(Error::Weights(format!("weight at {j} must be finite and nonzero, got {w}")));
        }
        left_tail.check()?;
        right_tail.check()?;
        Ok(Self { lo, table: table.into_values().collect(), left_tail, right_tail })
    }

    /// Same value everywhere.
    pub fn constant(v: f64) -> Result<Self> {
        let t = TailRule::Constant { value: v };
        Self::new(BTreeMap::from([(0, v)]), t, t)
    }

    /// Table from `lo` upward.
    pub fn from_slice(lo: i64, values: &[f64], left_tail: TailRule, right_tail: TailRule) -> Result<Self> {
        Self::new(values.iter().enumerate().map(|(i, v)| (lo + i as i64, *v)).collect(), left_tail, right_tail)
    }

    pub fn core(&self) -> IndexWindow {
        IndexWindow::new(self.lo, self.lo + self.table.len() as i64 - 1).expect("validated at construction")
    }

    pub fn left_tail(&self) -> TailRule {
        self.left_tail
    }

    pub fn right_tail(&self) -> TailRule {
        self.right_tail
    }

    /// `w_j`; may be infinite for extreme power laws, which callers report as non-finite.
    pub fn value(&self, j: i64) -> f64 {
        let hi = self.lo + self.table.len() as i64 - 1;
        if j < self.lo {
            self.left_tail.value(j)
        } else if j > hi {
            self.right_tail.value(j)
        } else {
            self.table[(j - self.lo) as usize]
        }
    }

    pub fn weight(&self, j: i64) -> Result<f64> {
        let v = self.value(j);
        if !v.is_finite() || v == 0.0 {
            return Err(Error::Weights(format!("weight at {j} evaluates to {v}")));
        }
        Ok(v)
    }

    /// `v_j = 1/w_{j−shift}`.
    fn reciprocal_shifted(&self, shift: i64) -> Result<WeightSequence> {
        let mut table = Vec::with_capacity(self.table.len());
        for w in &self.table {
            let r = 1.0 / w;
            if !r.is_finite() || r == 0.0 {
                return Err(Error::NotInvertible(format!("reciprocal of weight {w} is not representable")));
            }
            table.push(r);
        }
        Ok(WeightSequence {
            lo: self.lo + shift,
            table,
            left_tail: self.left_tail.reciprocal_shifted(shift)?,
            right_tail: self.right_tail.reciprocal_shifted(shift)?,
        })
    }

    /// `w'_i = w_{−i}`.
    pub fn reflected(&self) -> WeightSequence {
        let hi = self.lo + self.table.len() as i64 - 1;
        WeightSequence {
            lo: -hi,
            table: self.table.iter().rev().copied().collect(),
            left_tail: self.right_tail.reflected(),
            right_tail: self.left_tail.reflected(),
        }
    }

    /// Window outside of which both tails are strictly monotone in `|j|` away from any
    /// power-law offset, so each tail has a single `|w| ≶ 1` regime.
    pub(crate) fn analysis_window(&self) -> IndexWindow {
        let core = self.core();
        let mut lo = core.lo();
        let mut hi = core.hi();
        if let TailRule::PowerLaw { offset, .. } = self.left_tail {
            lo = lo.min(offset - 1);
        }
        if let TailRule::PowerLaw { offset, .. } = self.right_tail {
            hi = hi.max(offset + 1);
        }
        IndexWindow::with_cap(lo, hi, u64::MAX).expect("lo <= hi")
    }

    /// Extremes of `|w_j|` over `[a, b]`, exact (tails handled analytically).
    pub(crate) fn abs_extrema(&self, a: Option<i64>, b: Option<i64>) -> Option<Extrema> {
        if let (Some(a), Some(b)) = (a, b) {
            if a > b {
                return None;
            }
        }
        let core = self.core();
        let mut out: Option<Extrema> = None;
        let mut add = |e: Extrema| out = Some(out.map_or(e, |o| o.merge(e)));
        let left_hi = b.map_or(core.lo() - 1, |b| b.min(core.lo() - 1));
        if a.is_none_or(|a| a <= left_hi) {
            add(self.left_tail.abs_extrema(a, Some(left_hi)));
        }
        let right_lo = a.map_or(core.hi() + 1, |a| a.max(core.hi() + 1));
        if b.is_none_or(|b| right_lo <= b) {
            add(self.right_tail.abs_extrema(Some(right_lo), b));
        }
        let c_lo = a.map_or(core.lo(), |a| a.max(core.lo()));
        let c_hi = b.map_or(core.hi(), |b| b.min(core.hi()));
        for j in c_lo..=c_hi {
            let v = self.value(j).abs();
            add(Extrema { inf: v, sup: v });
        }
        out
    }
}

impl Serialize for WeightSequence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Table<'a>(&'a WeightSequence);
        impl Serialize for Table<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.table.len()))?;
                for (i, v) in self.0.table.iter().enumerate() {
                    m.serialize_entry(&(self.0.lo + i as i64).to_string(), v)?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("table", &Table(self))?;
        m.serialize_entry("left_tail", &self.left_tail)?;
        m.serialize_entry("right_tail", &self.right_tail)?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for WeightSequence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = WeightSequenceJson::deserialize(d)?;
        let mut table = BTreeMap::new();
        for (k, v) in raw.table {
            let j: i64 = k.parse().map_err(|_| serde::de::Error::custom(format!("bad index {k:?}")))?;
            table.insert(j, v);
        }
        WeightSequence::new(table, raw.left_tail, raw.right_tail).map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for WeightSequence {
    fn schema_name() -> Cow<'static, str> {
        "WeightSequence".into()
    }

    fn json_schema(g: &mut SchemaGenerator) -> Schema {
        WeightSequenceJson::json_schema(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sigma(self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ShiftOperator {
    pub direction: Direction,
    pub weights: WeightSequence,
}

impl ShiftOperator {
    pub fn forward(weights: WeightSequence) -> Self {
        Self { direction: Direction::Forward, weights }
    }

    pub fn backward(weights: WeightSequence) -> Self {
        Self { direction: Direction::Backward, weights }
    }

    pub fn apply(&self, x: &SeqVec) -> Result<SeqVec> {
        let w = &self.weights;
        x.translate_with(self.direction.sigma(), |j| w.value(j))
    }

    pub fn apply_inverse(&self, x: &SeqVec) -> Result<SeqVec> {
        let s = self.direction.sigma();
        let w = &self.weights;
        x.translate_with(-s, |j| 1.0 / w.value(j - s))
    }

    /// `F_w^{−1} = B_v` with `v_n = 1/w_{n−1}`; `B_w^{−1} = F_u` with `u_n = 1/w_{n+1}`.
    pub fn inverse(&self) -> Result<ShiftOperator> {
        let s = self.direction.sigma();
        Ok(ShiftOperator {
            direction: match self.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            },
            weights: self.weights.reciprocal_shifted(s)?,
        })
    }
}

pub fn shift_apply(op: &ShiftOperator, x: &SeqVec) -> Result<SeqVec> {
    op.apply(x)
}

pub fn shift_inverse(op: &ShiftOperator) -> Result<ShiftOperator> {
    op.inverse()
}

/// Operators the shadowing and conjugacy machinery runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Operator {
    Shift(ShiftOperator),
    /// `x ↦ factor · x`.
    Scale { factor: f64 },
}

impl From<ShiftOperator> for Operator {
    fn from(s: ShiftOperator) -> Self {
        Operator::Shift(s)
    }
}

impl Operator {
    pub fn scale(factor: f64) -> Result<Self> {
        let op = Operator::Scale { factor };
        op.check()?;
        Ok(op)
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Operator::Scale { factor } if !factor.is_finite() || *factor == 0.0 => {
                Err(Error::NotInvertible(format!("scale factor {factor}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &SeqVec) -> Result<SeqVec> {
        match self {
            Operator::Shift(s) => s.apply(x),
            Operator::Scale { factor } => x.scaled(*factor),
        }
    }

    pub fn apply_inverse(&self, x: &SeqVec) -> Result<SeqVec> {
        match self {
            Operator::Shift(s) => s.apply_inverse(x),
            Operator::Scale { factor } => {
                if *factor == 0.0 {
                    return Err(Error::NotInvertible("zero scale".into()));
                }
                x.scaled(1.0 / factor)
            }
        }
    }

    pub fn inverse(&self) -> Result<Operator> {
        match self {
            Operator::Shift(s) => Ok(Operator::Shift(s.inverse()?)),
            Operator::Scale { factor } => Operator::scale(1.0 / factor),
        }
    }

    /// `T^n x`; negative `n` applies the inverse.
    pub fn iterate(&self, x: &SeqVec, n: i64) -> Result<SeqVec> {
        let mut y = x.clone();
        for _ in 0..n.unsigned_abs() {
            y = if n > 0 { self.apply(&y)? } else { self.apply_inverse(&y)? };
        }
        Ok(y)
    }

    /// Index translation of one application (0 for scalar multiples).
    pub fn sigma(&self) -> i64 {
        match self {
            Operator::Shift(s) => s.direction.sigma(),
            Operator::Scale { .. } => 0,
        }
    }
}

pub fn iterate(op: &Operator, x: &SeqVec, n: i64) -> Result<SeqVec> {
    op.iterate(x, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSite {
    pub label: String,
    /// `|φ|` at this site.
    pub modulus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MarkedSite {
    pub label: String,
    /// Real unit scalar, `±1`.
    pub phase: f64,
}

/// `M_φ f = φ · f` sampled on a finite grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MultiplicationOperator {
    pub sites: Vec<GridSite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marked: Option<MarkedSite>,
}

impl MultiplicationOperator {
    pub fn new(sites: Vec<GridSite>, marked: Option<MarkedSite>) -> Result<Self> {
        let op = Self { sites, marked };
        op.check()?;
        Ok(op)
    }

    pub fn check(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::Parameter("grid has no sites".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sites {
            if !seen.insert(s.label.as_str()) {
                return Err(Error::Parameter(format!("duplicate site {:?}", s.label)));
            }
            if !(s.modulus.is_finite() && s.modulus > 0.0) {
                return Err(Error::Parameter(format!("modulus at {:?} must be positive, got {}", s.label, s.modulus)));
            }
        }
        if let Some(m) = &self.marked {
            if self.site_index(&m.label).is_none() {
                return Err(Error::Parameter(format!("marked site {:?} is not on the grid", m.label)));
            }
            if m.phase.abs() != 1.0 {
                return Err(Error::Parameter(format!("phase must be a unit scalar, got {}", m.phase)));
            }
        }
        Ok(())
    }

    pub fn site_index(&self, label: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.label == label)
    }

    /// `φ` at site `i` (the phase applies only at the marked site).
    pub fn value(&self, i: usize) -> f64 {
        let m = self.sites[i].modulus;
        match &self.marked {
            Some(mk) if self.sites[i].label == mk.label => m * mk.phase,
            _ => m,
        }
    }

    /// Modulus profile `φ ≡ v`.
    pub fn uniform(labels: &[&str], v: f64) -> Result<Self> {
        Self::new(labels.iter().map(|l| GridSite { label: l.to_string(), modulus: v }).collect(), None)
    }
}

/// Pointwise `φ · f`; `f` is indexed like the grid sites.
pub fn mult_apply(op: &MultiplicationOperator, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != op.sites.len() {
        return Err(Error::Parameter(format!("function has {} values for {} sites", f.len(), op.sites.len())));
    }
    Ok(f.iter().enumerate().map(|(i, v)| op.value(i) * v).collect())
}

/// Asymptotics of `j ↦ a_{j,k}` (or of a weight) on one side of ℤ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum TailGrowth {
    /// `≍ |j|^e`, positive.
    Power(f64),
    /// Identically zero beyond a finite index.
    Zero,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

pub(crate) fn weight_growth(w: &WeightSequence, side: Side) -> TailGrowth {
    let r = match side {
        Side::Left => w.left_tail,
        Side::Right => w.right_tail,
    };
    TailGrowth::Power(r.tail_exponent())
}

pub(crate) fn matrix_growth(a: &KotheMatrix, k: usize, side: Side) -> TailGrowth {
    match a {
        KotheMatrix::Constant { .. } => TailGrowth::Power(0.0),
        KotheMatrix::PolynomialGrade => TailGrowth::Power(k as f64),
        KotheMatrix::BandIndicator { .. } => TailGrowth::Zero,
        KotheMatrix::Table { .. } => TailGrowth::Unknown,
        KotheMatrix::WeightedConstant { weights } => weight_growth(weights, side),
    }
}

/// Index range on which a matrix still has non-asymptotic structure.
pub(crate) fn matrix_core(a: &KotheMatrix, grades: &[usize]) -> Option<IndexWindow> {
    match a {
        KotheMatrix::Constant { .. } | KotheMatrix::PolynomialGrade => None,
        KotheMatrix::BandIndicator { bands } => {
            let kmax = grades.iter().copied().max().unwrap_or(1);
            let jmax = match bands {
                None => kmax as u64,
                Some(b) => b[(kmax.min(b.len())).max(1) - 1],
            } as i64;
            IndexWindow::with_cap(-jmax - 1, jmax + 1, u64::MAX).ok()
        }
        KotheMatrix::Table { window, .. } => Some(*window),
        KotheMatrix::WeightedConstant { weights } => Some(weights.analysis_window()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum KotheStatus {
    /// Decided from the tail rules.
    Holds,
    /// Decided from the tail rules: no admissible `m` up to the search limit.
    Fails,
    /// Numeric scan only: the supremum stopped growing inside the horizon.
    BoundedWithinHorizon,
    /// Numeric scan only: still growing at the horizon.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GradeVerdict {
    pub grade: usize,
    pub status: KotheStatus,
    /// Least `m > k` realizing the bound.
    pub least_m: Option<usize>,
    /// Largest ratio seen over the scanned indices for `least_m` (or the last tried `m`).
    pub observed_sup: f64,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Criterion {
    WellDefined,
    Invertible,
}

/// Condition `sup_j |w_j| a_{j+1,k}/a_{j,m} < ∞` for each grade, least `m > k` reported.
pub fn kothe_well_defined(
    w: &WeightSequence,
    a: &KotheMatrix,
    grades: &[usize],
    horizon: u64,
) -> Result<Vec<GradeVerdict>> {
    kothe_verdicts(w, a, grades, horizon, Criterion::WellDefined)
}

/// Condition `sup_j a_{j,k}/(|w_j| a_{j+1,m}) < ∞` for each grade, least `m > k` reported.
pub fn kothe_invertible(
    w: &WeightSequence,
    a: &KotheMatrix,
    grades: &[usize],
    horizon: u64,
) -> Result<Vec<GradeVerdict>> {
    kothe_verdicts(w, a, grades, horizon, Criterion::Invertible)
}

const M_SEARCH: usize = 64;

fn kothe_verdicts(
    w: &WeightSequence,
    a: &KotheMatrix,
    grades: &[usize],
    horizon: u64,
    crit: Criterion,
) -> Result<Vec<GradeVerdict>> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    a.check()?;
    grades.iter().map(|&k| grade_verdict(w, a, k, horizon, crit)).collect()
}

fn ratio(w: &WeightSequence, a: &KotheMatrix, j: i64, k: usize, m: usize, crit: Criterion) -> Result<f64> {
    let wj = w.weight(j)?.abs();
    let (num, den) = match crit {
        Criterion::WellDefined => (wj * a.entry(j + 1, k)?, a.entry(j, m)?),
        Criterion::Invertible => (a.entry(j, k)?, wj * a.entry(j + 1, m)?),
    };
    Ok(if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    })
}

fn grade_verdict(w: &WeightSequence, a: &KotheMatrix, k: usize, horizon: u64, crit: Criterion) -> Result<GradeVerdict> {
    if k == 0 {
        return Err(Error::Grade { grade: 0, max: a.max_grade() });
    }
    let m_max = a.max_grade().unwrap_or(k + M_SEARCH);
    let h = horizon.min(i64::MAX as u64 / 4) as i64;

    if let KotheMatrix::Table { window, .. } = a {
        // Entries exist only on the table: numeric evidence at best.
        let lo = window.lo().max(-h);
        let hi = (window.hi() - 1).min(h);
        let mut last = f64::INFINITY;
        for m in (k + 1)..=m_max {
            let (full, inner) = scan_sup(w, a, k, m, crit, lo, hi)?;
            last = full;
            if full.is_finite() {
                let status =
                    if inner >= full { KotheStatus::BoundedWithinHorizon } else { KotheStatus::Inconclusive };
                return Ok(GradeVerdict {
                    grade: k,
                    status,
                    least_m: Some(m),
                    observed_sup: full,
                    note: format!("table matrix: numeric scan over [{lo}, {hi}]"),
                });
            }
        }
        return Ok(GradeVerdict {
            grade: k,
            status: KotheStatus::Inconclusive,
            least_m: None,
            observed_sup: last,
            note: format!("table matrix: no m up to {m_max} finite on [{lo}, {hi}]"),
        });
    }

    let core = {
        let mut c = w.analysis_window();
        if let Some(mc) = matrix_core(a, &[k, m_max]) {
            c = c.hull(&mc);
        }
        c
    };
    let mut last_sup = f64::INFINITY;
    for m in (k + 1)..=m_max {
        let mut bounded = true;
        for side in [Side::Left, Side::Right] {
            if !tail_bounded(w, a, k, m, side, crit) {
                bounded = false;
            }
        }
        let lo = core.lo().min(-h);
        let hi = core.hi().max(h);
        let (sup, _) = scan_sup(w, a, k, m, crit, lo, hi)?;
        last_sup = sup;
        if bounded && sup.is_finite() {
            return Ok(GradeVerdict {
                grade: k,
                status: KotheStatus::Holds,
                least_m: Some(m),
                observed_sup: sup,
                note: format!("tail exponents bounded; exact scan over [{lo}, {hi}]"),
            });
        }
    }
    Ok(GradeVerdict {
        grade: k,
        status: KotheStatus::Fails,
        least_m: None,
        observed_sup: last_sup,
        note: format!("ratio unbounded on a tail for every m in {}..={m_max}", k + 1),
    })
}

fn tail_bounded(w: &WeightSequence, a: &KotheMatrix, k: usize, m: usize, side: Side, crit: Criterion) -> bool {
    let (gw, gk, gm) = (weight_growth(w, side), matrix_growth(a, k, side), matrix_growth(a, m, side));
    match (gw, gk, gm) {
        // Band tails: every term is 0/0.
        (_, TailGrowth::Zero, TailGrowth::Zero) => true,
        (TailGrowth::Power(ew), TailGrowth::Power(ek), TailGrowth::Power(em)) => {
            let e = match crit {
                Criterion::WellDefined => ew + ek - em,
                Criterion::Invertible => ek - ew - em,
            };
            e <= 0.0
        }
        _ => false,
    }
}

/// Supremum of the criterion ratio over `[lo, hi]` and over its central half.
fn scan_sup(
    w: &WeightSequence,
    a: &KotheMatrix,
    k: usize,
    m: usize,
    crit: Criterion,
    lo: i64,
    hi: i64,
) -> Result<(f64, f64)> {
    let (qlo, qhi) = (lo / 2, hi / 2);
    let mut full: f64 = 0.0;
    let mut inner: f64 = 0.0;
    for j in lo..=hi {
        let r = ratio(w, a, j, k, m, crit)?;
        full = full.max(r);
        if qlo <= j && j <= qhi {
            inner = inner.max(r);
        }
    }
    Ok((full, inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pl(e: f64) -> TailRule {
        TailRule::PowerLaw { exponent: e, offset: 0 }
    }

    fn c(v: f64) -> TailRule {
        TailRule::Constant { value: v }
    }

    #[test]
    fn shift_examples() {
        let f = ShiftOperator::forward(WeightSequence::from_slice(0, &[2.0], c(1.0), c(1.0)).unwrap());
        assert_eq!(f.apply(&SeqVec::basis(0)).unwrap(), SeqVec::from_pairs([(1, 2.0)]).unwrap());

        let bw = WeightSequence::from_slice(0, &[0.5], c(0.5), c(2.0)).unwrap();
        let b = ShiftOperator::backward(bw);
        for n in 1..6 {
            assert_eq!(b.apply(&SeqVec::basis(n)).unwrap(), SeqVec::from_pairs([(n - 1, 2.0)]).unwrap());
        }

        let (a, bb) = (0.3, -1.7);
        let f = ShiftOperator::forward(WeightSequence::from_slice(0, &[a, bb], c(1.0), c(1.0)).unwrap());
        let x = SeqVec::from_pairs([(0, 1.0), (1, 1.0)]).unwrap();
        assert_eq!(f.apply(&x).unwrap(), SeqVec::from_pairs([(1, a), (2, bb)]).unwrap());
    }

    #[test]
    fn inverse_examples() {
        let f = ShiftOperator::forward(WeightSequence::constant(2.0).unwrap());
        let inv = f.inverse().unwrap();
        assert_eq!(inv.direction, Direction::Backward);
        for j in -5..5 {
            assert_eq!(inv.weights.value(j), 0.5);
        }

        let bw = WeightSequence::from_slice(0, &[0.5], c(0.5), c(2.0)).unwrap();
        let b = ShiftOperator::backward(bw.clone());
        let u = b.inverse().unwrap();
        assert_eq!(u.direction, Direction::Forward);
        for n in -6..6 {
            assert_eq!(u.weights.value(n), 1.0 / bw.value(n + 1));
        }

        let x = SeqVec::from_pairs([(-1, 3.0), (4, 1.0)]).unwrap();
        let y = b.apply(&x).unwrap();
        assert_eq!(u.apply(&y).unwrap(), x);
        assert_eq!(b.apply_inverse(&y).unwrap(), x);
    }

    #[test]
    fn power_law_inverse_matches_reciprocal() {
        let w = WeightSequence::from_slice(0, &[1.0], pl(-0.7), pl(1.3)).unwrap();
        for op in [ShiftOperator::forward(w.clone()), ShiftOperator::backward(w.clone())] {
            let inv = op.inverse().unwrap();
            let s = op.direction.sigma();
            for n in -30..30 {
                let want = 1.0 / w.value(n - s);
                assert!((inv.weights.value(n) - want).abs() <= 4.0 * f64::EPSILON * want.abs());
            }
        }
    }

    #[test]
    fn iterate_examples() {
        let op = Operator::Shift(ShiftOperator::forward(WeightSequence::constant(2.0).unwrap()));
        let x = SeqVec::from_pairs([(2, 1.5), (3, -1.0)]).unwrap();
        assert_eq!(op.iterate(&x, 0).unwrap(), x);
        for n in 0..20 {
            assert_eq!(op.iterate(&SeqVec::basis(0), n).unwrap(), SeqVec::from_pairs([(n, 2f64.powi(n as i32))]).unwrap());
        }
        assert_eq!(op.iterate(&SeqVec::basis(0), -1).unwrap(), SeqVec::from_pairs([(-1, 0.5)]).unwrap());
    }

    #[test]
    fn cap_propagates_through_shift() {
        let op = ShiftOperator::forward(WeightSequence::constant(1e200).unwrap());
        assert!(matches!(op.apply(&SeqVec::from_pairs([(0, 1e200)]).unwrap()), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn weight_validation() {
        assert!(WeightSequence::from_slice(0, &[0.0], c(1.0), c(1.0)).is_err());
        assert!(WeightSequence::from_slice(0, &[1.0], c(0.0), c(1.0)).is_err());
        assert!(WeightSequence::new(BTreeMap::from([(0, 1.0), (2, 1.0)]), c(1.0), c(1.0)).is_err());
        let s = r#"{"table":{"-1":0.5,"0":2.0},"left_tail":{"kind":"constant","value":0.5},"right_tail":{"kind":"power_law","exponent":-1.0}}"#;
        let w: WeightSequence = serde_json::from_str(s).unwrap();
        assert_eq!(w.value(-1), 0.5);
        assert_eq!(w.value(3), 0.25);
        assert_eq!(serde_json::to_string(&w).unwrap(), s);
        assert!(serde_json::from_str::<WeightSequence>(r#"{"table":{},"left_tail":{"kind":"constant","value":1},"right_tail":{"kind":"constant","value":1}}"#).is_err());
    }

    #[test]
    fn operator_json_tagging() {
        let op = Operator::Shift(ShiftOperator::forward(WeightSequence::constant(2.0).unwrap()));
        let s = serde_json::to_string(&op).unwrap();
        assert!(s.starts_with(r#"{"kind":"shift","direction":"forward""#), "{s}");
        assert_eq!(serde_json::from_str::<Operator>(&s).unwrap(), op);
        let sc: Operator = serde_json::from_str(r#"{"kind":"scale","factor":2.0}"#).unwrap();
        assert_eq!(sc, Operator::Scale { factor: 2.0 });
        assert!(serde_json::from_str::<Operator>(r#"{"kind":"scale","factor":2.0,"x":1}"#).is_err());
        let bad = s.replace(r#""direction":"forward""#, r#""direction":"forward","junk":0"#);
        assert!(serde_json::from_str::<Operator>(&bad).is_err());
    }

    #[test]
    fn extrema_of_tails() {
        let w = WeightSequence::from_slice(0, &[5.0], pl(1.0), pl(-1.0)).unwrap();
        let e = w.abs_extrema(Some(1), None).unwrap();
        assert_eq!((e.inf, e.sup), (0.0, 0.5));
        let e = w.abs_extrema(None, Some(-1)).unwrap();
        assert_eq!((e.inf, e.sup), (2.0, f64::INFINITY));
        let e = w.abs_extrema(Some(-2), Some(3)).unwrap();
        assert_eq!((e.inf, e.sup), (0.25, 5.0));
    }

    #[test]
    fn multiplication_examples() {
        let id = MultiplicationOperator::uniform(&["a", "b", "c"], 1.0).unwrap();
        assert_eq!(mult_apply(&id, &[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        let two = MultiplicationOperator::uniform(&["a", "b", "c"], 2.0).unwrap();
        assert_eq!(mult_apply(&two, &[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 2.0, 0.0]);
        let m = MultiplicationOperator::new(
            vec![GridSite { label: "z0".into(), modulus: 1.0 }, GridSite { label: "z1".into(), modulus: 0.5 }],
            Some(MarkedSite { label: "z0".into(), phase: -1.0 }),
        )
        .unwrap();
        let mut f = vec![1.0, 1.0];
        for j in 1..=7 {
            f = mult_apply(&m, &f).unwrap();
            assert_eq!(f[0], (-1f64).powi(j));
        }
        assert!(MultiplicationOperator::uniform(&["a"], 0.0).is_err());
        assert!(MultiplicationOperator::new(
            vec![GridSite { label: "z0".into(), modulus: 1.0 }],
            Some(MarkedSite { label: "z0".into(), phase: 0.5 })
        )
        .is_err());
    }

    #[test]
    fn kothe_examples() {
        let grades = [1, 2, 3];
        let two = WeightSequence::constant(2.0).unwrap();
        for v in kothe_well_defined(&two, &KotheMatrix::PolynomialGrade, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
            assert_eq!(v.least_m, Some(v.grade + 1));
            assert!(v.observed_sup <= 2.0 * 2f64.powi(v.grade as i32));
        }
        for v in kothe_invertible(&two, &KotheMatrix::PolynomialGrade, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
        }

        let sqrt = WeightSequence::from_slice(0, &[1.0], pl(0.5), pl(0.5)).unwrap();
        for v in kothe_well_defined(&sqrt, &KotheMatrix::PolynomialGrade, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
            assert_eq!(v.least_m, Some(v.grade + 1));
        }

        let wild = WeightSequence::from_slice(0, &[1.0], pl(3.0), pl(7.0)).unwrap();
        for v in kothe_well_defined(&wild, &KotheMatrix::BandIndicator { bands: None }, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
        }
        for v in kothe_invertible(&wild, &KotheMatrix::BandIndicator { bands: None }, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
        }

        let (r, l) = (1.5, 0.5);
        let both = WeightSequence::from_slice(0, &[1.0], pl(-l), pl(r)).unwrap();
        for v in kothe_invertible(&both, &KotheMatrix::PolynomialGrade, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
        }
        for v in kothe_well_defined(&both, &KotheMatrix::PolynomialGrade, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Holds);
            assert_eq!(v.least_m, Some(v.grade + 2));
        }

        let decay = WeightSequence::from_slice(0, &[1.0], pl(-1.0), pl(-1.0)).unwrap();
        let lp = KotheMatrix::Constant { value: 1.0 };
        for v in kothe_invertible(&decay, &lp, &grades, 200).unwrap() {
            assert_eq!(v.status, KotheStatus::Fails);
            assert!(v.observed_sup >= 200.0);
        }
    }

    #[test]
    fn kothe_table_is_numeric() {
        let window = IndexWindow::new(-50, 50).unwrap();
        let rows = (1..=4)
            .map(|k| window.indices().map(|j| ((j.abs() + 1) as f64).powi(k)).collect())
            .collect();
        let t = KotheMatrix::Table { window, rows };
        let v = kothe_well_defined(&WeightSequence::constant(2.0).unwrap(), &t, &[1], 100).unwrap();
        assert_eq!(v[0].status, KotheStatus::BoundedWithinHorizon);
        let grow = WeightSequence::from_slice(0, &[1.0], pl(3.0), pl(3.0)).unwrap();
        let v = kothe_well_defined(&grow, &t, &[1], 100).unwrap();
        assert_eq!(v[0].status, KotheStatus::Inconclusive);
    }

    proptest! {
        #[test]
        fn kothe_verdict_stable_in_horizon(e in -2.0f64..2.0, h in 1u64..200) {
            let w = WeightSequence::from_slice(0, &[1.0], pl(e), pl(e)).unwrap();
            let a = kothe_well_defined(&w, &KotheMatrix::PolynomialGrade, &[1, 2], h).unwrap();
            let b = kothe_well_defined(&w, &KotheMatrix::PolynomialGrade, &[1, 2], h * 3).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.status, y.status);
                prop_assert_eq!(x.least_m, y.least_m);
            }
        }

        #[test]
        fn round_trip_and_support_translation(
            vals in prop::collection::vec(-4.0f64..4.0, 1..10),
            lo in -30i64..30,
            wv in prop::collection::vec(0.1f64..5.0, 6),
            e in -1.5f64..1.5,
            fwd in any::<bool>(),
        ) {
            let w = WeightSequence::from_slice(-3, &wv, pl(e), pl(-e)).unwrap();
            let op = if fwd { ShiftOperator::forward(w) } else { ShiftOperator::backward(w) };
            let x = SeqVec::new(IndexWindow::new(lo, lo + vals.len() as i64 - 1).unwrap(), vals).unwrap();
            let y = op.apply(&x).unwrap();
            let s = op.direction.sigma();
            prop_assert_eq!(y.support(), x.support().map(|w| w.shifted(s)));
            let inv = op.inverse().unwrap();
            for back in [inv.apply(&y).unwrap(), op.apply_inverse(&y).unwrap()] {
                for (j, v) in x.iter() {
                    prop_assert!((back.coeff(j) - v).abs() <= 1e-14 * v.abs());
                }
                prop_assert_eq!(back.support(), x.support());
            }
        }

        #[test]
        fn linearity(
            a in -3.0f64..3.0,
            xs in prop::collection::vec(-4.0f64..4.0, 1..8),
            ys in prop::collection::vec(-4.0f64..4.0, 1..8),
        ) {
            let w = WeightSequence::from_slice(0, &[0.5, 4.0, 0.25], c(2.0), c(0.5)).unwrap();
            let op = ShiftOperator::forward(w);
            let x = SeqVec::new(IndexWindow::new(-2, xs.len() as i64 - 3).unwrap(), xs).unwrap();
            let y = SeqVec::new(IndexWindow::new(0, ys.len() as i64 - 1).unwrap(), ys).unwrap();
            let lhs = op.apply(&SeqVec::axpy(a, &x, &y).unwrap()).unwrap();
            let rhs = SeqVec::axpy(a, &op.apply(&x).unwrap(), &op.apply(&y).unwrap()).unwrap();
            let (tx, ty) = (op.apply(&x).unwrap(), op.apply(&y).unwrap());
            for j in -5..12 {
                let scale = (a * tx.coeff(j)).abs() + ty.coeff(j).abs();
                prop_assert!((lhs.coeff(j) - rhs.coeff(j)).abs() <= 4.0 * f64::EPSILON * scale);
            }
        }
    }
}
