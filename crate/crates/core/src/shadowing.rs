//! Pseudotrajectories, the explicit shadowing-point series, and the two counterexamples.
//!
//! Chains of a hyperbolic shift grow geometrically on the expanding side, so a length-50 chain
//! carries coordinates of size `4^50` next to defects of size `1e-3`. Points, defects and shadow
//! points are therefore kept as [`WideVec`]s: products by weights are exact, divisions are rounded
//! at a working precision chosen from the chain's dynamic range. Seminorms are evaluated after
//! rounding the (small) differences back to `f64`.

use std::collections::BTreeMap;

use dashu_float::round::mode::HalfEven;
use dashu_float::{Context, FBig, Repr};
use dashu_int::ops::{BitTest, UnsignedAbs};
use dashu_int::IBig;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::{json_schema, JsonSchema, Schema, SchemaGenerator};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hyperbolicity::{GHCertificate, GradeConstants, Splitting};
use crate::operators::{MultiplicationOperator, Operator, ShiftOperator};
use crate::spaces::{IndexWindow, SeminormFamily, SeqVec};
use crate::{Error, Result};

pub type Wide = FBig<HalfEven, 2>;

/// Exact conversion; the value carries unlimited precision.
pub fn wide(v: f64) -> Wide {
    let repr = Repr::<2>::try_from(v).expect("finite value");
    Wide::from_repr(repr, Context::new(0))
}

fn wide_at(v: f64, precision: usize) -> Wide {
    let repr = Repr::<2>::try_from(v).expect("finite value");
    Wide::from_repr(repr, Context::new(precision))
}

fn is_zero(x: &Wide) -> bool {
    x.repr().significand().is_zero()
}

/// `floor(log2 |x|)` for nonzero `x`.
fn log2_floor(x: &Wide) -> isize {
    let r = x.repr();
    r.exponent() + r.significand().unsigned_abs().bit_len() as isize - 1
}

/// Finite-support vector with arbitrary-precision coefficients (nonzero entries only).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WideVec {
    coeffs: BTreeMap<i64, Wide>,
}

impl WideVec {
    pub fn zero() -> Self {
        WideVec::default()
    }

    pub fn coeff(&self, j: i64) -> Option<&Wide> {
        self.coeffs.get(&j)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Wide)> + '_ {
        self.coeffs.iter().map(|(j, v)| (*j, v))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn support(&self) -> Option<(i64, i64)> {
        Some((*self.coeffs.keys().next()?, *self.coeffs.keys().next_back()?))
    }

    fn from_map(map: BTreeMap<i64, Wide>) -> Self {
        WideVec { coeffs: map.into_iter().filter(|(_, v)| !is_zero(v)).collect() }
    }

    pub fn add(&self, other: &WideVec) -> WideVec {
        let mut out = self.coeffs.clone();
        for (j, v) in &other.coeffs {
            let s = match out.remove(j) {
                Some(u) => u + v,
                None => v.clone(),
            };
            out.insert(*j, s);
        }
        WideVec::from_map(out)
    }

    pub fn sub(&self, other: &WideVec) -> WideVec {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> WideVec {
        WideVec { coeffs: self.coeffs.iter().map(|(j, v)| (*j, -v.clone())).collect() }
    }

    pub fn restrict(&self, mut keep: impl FnMut(i64) -> bool) -> WideVec {
        WideVec { coeffs: self.coeffs.iter().filter(|(j, _)| keep(**j)).map(|(j, v)| (*j, v.clone())).collect() }
    }

    /// Coefficientwise rounding to `f64`.
    pub fn to_seq(&self) -> Result<SeqVec> {
        SeqVec::from_pairs(self.coeffs.iter().map(|(j, v)| (*j, v.to_f64().value())))
    }

    /// `floor(log2 max |x_j|)`, or `None` for the zero vector.
    pub fn log2_max(&self) -> Option<isize> {
        self.coeffs.values().map(log2_floor).max()
    }

    /// `Tx`: exact for shifts and scalar multiples (products of binary floats).
    pub fn apply(&self, op: &Operator) -> Result<WideVec> {
        match op {
            Operator::Scale { factor } => {
                let f = wide(*factor);
                Ok(WideVec { coeffs: self.coeffs.iter().map(|(j, v)| (*j, v * &f)).collect() })
            }
            Operator::Shift(s) => {
                let sigma = s.direction.sigma();
                let mut out = BTreeMap::new();
                for (j, v) in &self.coeffs {
                    out.insert(j + sigma, v * wide(s.weights.weight(*j)?));
                }
                Ok(WideVec { coeffs: out })
            }
        }
    }

    /// `T⁻¹x`, rounded at `precision` bits.
    pub fn apply_inverse(&self, op: &Operator, precision: usize) -> Result<WideVec> {
        let one = wide_at(1.0, precision);
        match op {
            Operator::Scale { factor } => {
                let f = &one / wide_at(*factor, precision);
                Ok(WideVec { coeffs: self.coeffs.iter().map(|(j, v)| (*j, v * &f)).collect() })
            }
            Operator::Shift(s) => {
                let sigma = s.direction.sigma();
                let mut out = BTreeMap::new();
                for (j, v) in &self.coeffs {
                    let w = s.weights.weight(j - sigma)?;
                    out.insert(j - sigma, v * (&one / wide_at(w, precision)));
                }
                Ok(WideVec { coeffs: out })
            }
        }
    }

    /// Seminorm of the `f64` rounding.
    pub fn eval(&self, fam: &SeminormFamily, k: usize) -> Result<f64> {
        fam.eval(&self.to_seq()?, k)
    }
}

impl From<&SeqVec> for WideVec {
    fn from(x: &SeqVec) -> Self {
        WideVec { coeffs: x.iter().map(|(j, v)| (j, wide(v))).collect() }
    }
}

fn format_wide(v: &Wide) -> String {
    let r = v.repr();
    format!("{}p{}", r.significand(), r.exponent())
}

fn parse_wide(s: &str) -> std::result::Result<Wide, String> {
    let (m, e) = s.split_once('p').ok_or_else(|| format!("expected <significand>p<exponent>, got {s:?}"))?;
    let m: IBig = m.parse().map_err(|e| format!("bad significand in {s:?}: {e:?}"))?;
    let e: isize = e.parse().map_err(|e| format!("bad exponent in {s:?}: {e}"))?;
    Ok(Wide::from_repr(Repr::new(m, e), Context::new(0)))
}

/// JSON: `{"coeffs": {"j": "<significand>p<exponent>"}}`, the exact value `significand · 2^exponent`.
impl Serialize for WideVec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        struct Coeffs<'a>(&'a BTreeMap<i64, Wide>);
        impl Serialize for Coeffs<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for (j, v) in self.0 {
                    m.serialize_entry(&j.to_string(), &format_wide(v))?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(1))?;
        m.serialize_entry("coeffs", &Coeffs(&self.coeffs))?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for WideVec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Json {
            coeffs: BTreeMap<String, String>,
        }
        let j = Json::deserialize(d)?;
        let mut out = BTreeMap::new();
        for (k, v) in j.coeffs {
            let idx: i64 = k.parse().map_err(|_| serde::de::Error::custom(format!("bad index {k:?}")))?;
            out.insert(idx, parse_wide(&v).map_err(serde::de::Error::custom)?);
        }
        Ok(WideVec::from_map(out))
    }
}

impl JsonSchema for WideVec {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "WideVec".into()
    }

    fn json_schema(_: &mut SchemaGenerator) -> Schema {
        json_schema!({
            "type": "object",
            "description": "Exact binary coefficients: index -> \"<significand>p<exponent>\" meaning significand * 2^exponent.",
            "properties": {
                "coeffs": {
                    "type": "object",
                    "patternProperties": { "^-?[0-9]+$": { "type": "string", "pattern": "^-?[0-9]+p-?[0-9]+$" } },
                    "additionalProperties": false
                }
            },
            "required": ["coeffs"],
            "additionalProperties": false
        })
    }
}

/// Ordered points `x_i`, `i = start_index, start_index + 1, …`, with cached defects
/// `y_i := x_{i+1} − T x_i` and the closed-ball bound `‖y_i‖_grade ≤ delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Pseudotrajectory {
    pub operator: Operator,
    pub family: SeminormFamily,
    pub grade: usize,
    pub delta: f64,
    pub periodic: bool,
    pub start_index: i64,
    pub points: Vec<WideVec>,
    pub defects: Vec<WideVec>,
}

fn defects_of(op: &Operator, points: &[WideVec]) -> Result<Vec<WideVec>> {
    points.windows(2).map(|p| Ok(p[1].sub(&p[0].apply(op)?))).collect()
}

impl Pseudotrajectory {
    pub fn from_points(
        op: &Operator,
        fam: &SeminormFamily,
        grade: usize,
        delta: f64,
        points: Vec<WideVec>,
        periodic: bool,
        start_index: i64,
    ) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
        }
        if points.is_empty() {
            return Err(Error::Pseudotrajectory("no points".into()));
        }
        if periodic && points.first() != points.last() {
            return Err(Error::Pseudotrajectory("periodic chain must end at its first point".into()));
        }
        op.check()?;
        fam.check()?;
        let defects = defects_of(op, &points)?;
        let chain = Pseudotrajectory {
            operator: op.clone(),
            family: fam.clone(),
            grade,
            delta,
            periodic,
            start_index,
            points,
            defects,
        };
        chain.check_bounds()?;
        Ok(chain)
    }

    /// Number of steps (= number of defects).
    pub fn len(&self) -> usize {
        self.defects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defects.is_empty()
    }

    pub fn end_index(&self) -> i64 {
        self.start_index + self.len() as i64
    }

    pub fn point(&self, i: i64) -> Option<&WideVec> {
        usize::try_from(i - self.start_index).ok().and_then(|k| self.points.get(k))
    }

    pub fn defect_norms(&self) -> Result<Vec<f64>> {
        self.defects.iter().map(|y| y.eval(&self.family, self.grade)).collect()
    }

    fn check_bounds(&self) -> Result<()> {
        for (i, n) in self.defect_norms()?.into_iter().enumerate() {
            if !(n <= self.delta) {
                return Err(Error::Pseudotrajectory(format!(
                    "defect {} has seminorm {n} > delta = {}",
                    self.start_index + i as i64,
                    self.delta
                )));
            }
        }
        Ok(())
    }

    /// Re-derives the defects from the points and compares with the cache.
    pub fn verify_defects(&self) -> Result<()> {
        if defects_of(&self.operator, &self.points)? != self.defects {
            return Err(Error::Pseudotrajectory("cached defects disagree with the points".into()));
        }
        self.check_bounds()
    }

    /// Bits needed so that rounding stays far below `delta` after the chain's amplification.
    pub fn working_precision(&self) -> usize {
        let top = self.points.iter().chain(&self.defects).filter_map(WideVec::log2_max).max().unwrap_or(0);
        let range = (top as f64 - self.delta.log2()).max(0.0).ceil() as usize;
        128 + 2 * range
    }

    pub fn points_f64(&self) -> Result<Vec<SeqVec>> {
        self.points.iter().map(WideVec::to_seq).collect()
    }
}

/// Chain-generation options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChainOptions {
    /// Multiplies every defect norm; `0` gives an exact orbit.
    #[serde(default = "one")]
    pub scale: f64,
    /// Defects are supported in this window (default: adjacent supports only).
    #[serde(default)]
    pub window: Option<IndexWindow>,
}

fn one() -> f64 {
    1.0
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions { scale: 1.0, window: None }
    }
}

fn hull(a: Option<(i64, i64)>, b: Option<(i64, i64)>) -> Option<(i64, i64)> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Random defect with seminorm uniform in `[0.2δ, 0.9δ]·scale`, drawn on `active`.
fn random_defect(
    rng: &mut ChaCha8Rng,
    fam: &SeminormFamily,
    grade: usize,
    delta: f64,
    scale: f64,
    active: (i64, i64),
) -> Result<SeqVec> {
    let w = IndexWindow::new(active.0, active.1)?;
    let target = rng.random_range(0.2..0.9) * delta * scale;
    let dir = SeqVec::from_fn(w, |_| rng.random_range(-1.0..1.0))?;
    let n = fam.eval(&dir, grade)?;
    if scale == 0.0 || n == 0.0 {
        return Ok(SeqVec::zero());
    }
    dir.scaled(target / n)
}

fn active_set(opts: &ChainOptions, x: &WideVec, tx: &WideVec) -> Option<(i64, i64)> {
    let adj = hull(x.support(), tx.support());
    match (opts.window, adj) {
        (Some(w), Some((lo, hi))) => {
            let (lo, hi) = (lo.max(w.lo()), hi.min(w.hi()));
            Some(if lo <= hi { (lo, hi) } else { (w.lo(), w.hi()) })
        }
        (Some(w), None) => Some((w.lo(), w.hi())),
        (None, adj) => adj.or(Some((0, 0))),
    }
}

fn check_delta(delta: f64, scale: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    if !(0.0..=1.0).contains(&scale) {
        return Err(Error::Parameter(format!("defect scale must lie in [0, 1], got {scale}")));
    }
    Ok(())
}

/// `x_{j+1} = T x_j + r_j` for `j < length`, deterministic under `seed`.
#[allow(clippy::too_many_arguments)]
pub fn make_chain(
    op: &Operator,
    fam: &SeminormFamily,
    x0: &SeqVec,
    length: usize,
    grade: usize,
    delta: f64,
    seed: u64,
    opts: &ChainOptions,
) -> Result<Pseudotrajectory> {
    check_delta(delta, opts.scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![WideVec::from(x0)];
    for _ in 0..length {
        let x = points.last().expect("nonempty");
        let tx = x.apply(op)?;
        let active = active_set(opts, x, &tx).expect("active set");
        let r = random_defect(&mut rng, fam, grade, delta, opts.scale, active)?;
        points.push(tx.add(&WideVec::from(&r)));
    }
    Pseudotrajectory::from_points(op, fam, grade, delta, points, false, 0)
}

/// Chain of `period − 1` random steps from `x0`, closed by the defect `x0 − T x_{p−1}`.
#[allow(clippy::too_many_arguments)]
pub fn make_cycle(
    op: &Operator,
    fam: &SeminormFamily,
    x0: &SeqVec,
    period: usize,
    grade: usize,
    delta: f64,
    seed: u64,
    opts: &ChainOptions,
) -> Result<Pseudotrajectory> {
    if period == 0 {
        return Err(Error::Parameter("period must be at least 1".into()));
    }
    let open = make_chain(op, fam, x0, period - 1, grade, delta, seed, opts)?;
    let mut points = open.points;
    let closing = points[0].sub(&points.last().expect("nonempty").apply(op)?);
    let norm = closing.eval(fam, grade)?;
    if !(norm <= delta) {
        return Err(Error::ClosingDefect { norm, delta });
    }
    points.push(points[0].clone());
    Pseudotrajectory::from_points(op, fam, grade, delta, points, true, 0)
}

/// Random `δ`-cycle for a GH operator: the defects are drawn first and `x_0` is the truncated
/// periodic point of the defect sum, so the closing defect differs from its draw by at most the
/// truncation tail.
#[allow(clippy::too_many_arguments)]
pub fn make_closing_cycle(
    op: &Operator,
    cert: &GHCertificate,
    period: usize,
    grade: usize,
    delta: f64,
    seed: u64,
    opts: &ChainOptions,
) -> Result<Pseudotrajectory> {
    cert.check_operator(op)?;
    check_delta(delta, opts.scale)?;
    if period == 0 {
        return Err(Error::Parameter("period must be at least 1".into()));
    }
    let fam = &cert.family;
    let g = cert.constants(grade)?;
    let window = opts.window.unwrap_or(IndexWindow::new(-4, 4)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draws are capped at 0.85δ so the truncation tail cannot push the closing defect past δ.
    let ys: Vec<WideVec> = (0..period)
        .map(|_| random_defect(&mut rng, fam, grade, delta, opts.scale * 0.85 / 0.9, (window.lo(), window.hi())))
        .map(|r| r.map(|r| WideVec::from(&r)))
        .collect::<Result<_>>()?;
    let mut d = WideVec::zero();
    for y in &ys {
        d = d.apply(op)?.add(y);
    }
    let precision = 256 + period * 8;
    let tail_target = 0.01 * delta;
    let (x0, _) = periodic_solve(op, &cert.splitting, g, cert.d, &d, period, delta * period as f64, tail_target, precision)?;
    let mut points = vec![x0.clone()];
    for y in &ys[..period - 1] {
        let next = points.last().expect("nonempty").apply(op)?.add(y);
        points.push(next);
    }
    points.push(x0);
    Pseudotrajectory::from_points(op, fam, grade, delta, points, true, 0)
}

/// Truncated `(I − T^p)⁻¹ D = Σ_{k<K'} T^{kp} P_M D − Σ_{1≤k≤K} S^{kp} P_N D`.
#[allow(clippy::too_many_arguments)]
fn periodic_solve(
    op: &Operator,
    split: &Splitting,
    g: GradeConstants,
    d: f64,
    rhs: &WideVec,
    p: usize,
    rhs_bound: f64,
    tol: f64,
    precision: usize,
) -> Result<(WideVec, usize)> {
    let tp = g.t.powi(p as i32);
    let mut blocks = 1usize;
    while g.c * d * rhs_bound * tp.powi(blocks as i32) / (1.0 - tp) > tol {
        blocks += 1;
    }
    let mut x = WideVec::zero();
    let mut m = split.project_m_wide(rhs);
    let mut n = split.project_n_wide(rhs);
    for _ in 0..blocks {
        x = x.add(&m);
        for _ in 0..p {
            m = m.apply(op)?;
            n = split.project_n_wide(&n.apply_inverse(op, precision)?);
        }
        x = x.sub(&n);
    }
    Ok((x, blocks))
}

impl Splitting {
    pub fn project_m_wide(&self, x: &WideVec) -> WideVec {
        x.restrict(|j| self.in_m(j))
    }

    pub fn project_n_wide(&self, x: &WideVec) -> WideVec {
        x.restrict(|j| self.in_n(j))
    }
}

/// Random two-sided segment `x_{−m}, …, x_m` through `x0`; backward steps solve
/// `x_{−j−1} = T⁻¹(x_{−j} − r_j)` so every defect is a fresh draw.
#[allow(clippy::too_many_arguments)]
pub fn make_two_sided(
    op: &Operator,
    fam: &SeminormFamily,
    x0: &SeqVec,
    m: usize,
    grade: usize,
    delta: f64,
    seed: u64,
    opts: &ChainOptions,
) -> Result<Pseudotrajectory> {
    check_delta(delta, opts.scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let precision = 192 + m * inverse_growth_bits(op);
    let start = WideVec::from(x0);
    let mut fwd = vec![start.clone()];
    let mut bwd = vec![start];
    for _ in 0..m {
        let x = fwd.last().expect("nonempty");
        let tx = x.apply(op)?;
        let active = active_set(opts, x, &tx).expect("active set");
        let r = random_defect(&mut rng, fam, grade, delta, opts.scale, active)?;
        fwd.push(tx.add(&WideVec::from(&r)));

        let x = bwd.last().expect("nonempty");
        let sx = x.apply_inverse(op, precision)?;
        let active = active_set(opts, x, &sx).expect("active set");
        let r = random_defect(&mut rng, fam, grade, delta * 0.999, opts.scale, active)?;
        bwd.push(x.sub(&WideVec::from(&r)).apply_inverse(op, precision)?);
    }
    let mut points: Vec<WideVec> = bwd.into_iter().skip(1).rev().collect();
    points.extend(fwd);
    Pseudotrajectory::from_points(op, fam, grade, delta, points, false, -(m as i64))
}

/// Bits gained per application of `T` or `T⁻¹` (at least 1).
fn growth_bits(op: &Operator) -> usize {
    let sup = match op {
        Operator::Scale { factor } => factor.abs(),
        Operator::Shift(s) => s.weights.abs_extrema(None, None).map_or(f64::INFINITY, |e| e.sup),
    };
    let fwd = if sup.is_finite() { sup.log2().ceil().max(1.0) as usize } else { 64 };
    fwd.max(inverse_growth_bits(op))
}

/// Bits gained per application of `T⁻¹` (at least 1).
fn inverse_growth_bits(op: &Operator) -> usize {
    let inv_sup = match op {
        Operator::Scale { factor } => 1.0 / factor.abs(),
        Operator::Shift(s) => s.weights.abs_extrema(None, None).map_or(f64::INFINITY, |e| 1.0 / e.inf),
    };
    if inv_sup.is_finite() {
        inv_sup.log2().ceil().max(1.0) as usize
    } else {
        64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ShadowMode {
    Finite,
    Periodic,
    TwoSided,
}

/// Indices `start_index ..= start_index + steps` covered by a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Segment {
    pub start_index: i64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ShadowReport {
    pub mode: ShadowMode,
    pub segment: Segment,
    pub grade: usize,
    pub delta: f64,
    /// `f64` rounding of the shadow point (its orbit need not shadow; see `shadow_point_exact`).
    pub shadow_point: SeqVec,
    pub shadow_point_exact: WideVec,
    /// `‖x_i − T^i x‖_grade` for every index of the segment.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub bound_used: f64,
    pub bound_holds: bool,
    pub periodic_residual: Option<f64>,
    pub residual_bound: Option<f64>,
    pub truncation_tolerance: Option<f64>,
    /// Series terms kept.
    pub truncation_terms: Option<usize>,
    pub working_precision: usize,
    pub provenance: Vec<String>,
}

impl ShadowReport {
    /// CSV trace with columns `step,deviation,bound`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,deviation,bound\n");
        for (i, d) in self.deviations.iter().enumerate() {
            s.push_str(&format!("{},{:e},{:e}\n", self.segment.start_index + i as i64, d, self.bound_used));
        }
        s
    }
}

/// Relative slack for comparing `f64` seminorms of exactly computed differences with bounds.
const BOUND_SLACK: f64 = 1e-12;

fn check_inputs(chain: &Pseudotrajectory, cert: &GHCertificate, op: &Operator) -> Result<GradeConstants> {
    cert.check_operator(op)?;
    if &chain.operator != op {
        return Err(Error::CertificateMismatch("chain was generated by a different operator".into()));
    }
    if chain.family != cert.family {
        return Err(Error::CertificateMismatch("chain and certificate use different seminorm families".into()));
    }
    let g = cert.constants(chain.grade)?;
    if g.beta != chain.grade {
        return Err(Error::CertificateMismatch(format!(
            "certificate needs defects bounded at grade {}, chain is bounded at grade {}",
            g.beta, chain.grade
        )));
    }
    chain.verify_defects()?;
    Ok(g)
}

/// Orbit deviations `‖x_i − T^i x‖_grade` over the chain's indices.
fn deviations(chain: &Pseudotrajectory, x: &WideVec, grade: usize, precision: usize) -> Result<Vec<f64>> {
    let op = &chain.operator;
    let n = chain.points.len();
    let mut out = vec![0.0; n];
    let zero = usize::try_from(-chain.start_index).unwrap_or(0).min(n - 1);
    let origin = if chain.start_index <= 0 { zero } else { 0 };
    // T^i x for i ≥ max(start, 0), T^{-i} x for negative indices.
    let mut v = x.clone();
    if chain.start_index > 0 {
        for _ in 0..chain.start_index {
            v = v.apply(op)?;
        }
    }
    let mut fwd = v.clone();
    for (k, slot) in out.iter_mut().enumerate().skip(origin) {
        if k > origin {
            fwd = fwd.apply(op)?;
        }
        *slot = chain.points[k].sub(&fwd).eval(&chain.family, grade)?;
    }
    let mut bwd = v;
    for k in (0..origin).rev() {
        bwd = bwd.apply_inverse(op, precision)?;
        out[k] = chain.points[k].sub(&bwd).eval(&chain.family, grade)?;
    }
    Ok(out)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, d| m.max(*d))
}

/// `x := x_0 + Σ_{j=1}^p S^j P_N y_{j−1}`.
pub fn shadow_finite(chain: &Pseudotrajectory, cert: &GHCertificate, op: &Operator) -> Result<ShadowReport> {
    let g = check_inputs(chain, cert, op)?;
    if chain.start_index != 0 {
        return Err(Error::Pseudotrajectory("finite shadowing expects a chain starting at index 0".into()));
    }
    let precision = chain.working_precision();
    let split = &cert.splitting;
    let mut acc = WideVec::zero();
    for y in chain.defects.iter().rev() {
        acc = split.project_n_wide(&acc.add(&split.project_n_wide(y)).apply_inverse(op, precision)?);
    }
    let x = chain.points[0].add(&acc);
    let devs = deviations(chain, &x, chain.grade, precision)?;
    let bound = 2.0 * g.c * cert.d * chain.delta / (1.0 - g.t);
    report(ShadowMode::Finite, chain, x, devs, bound, precision, vec![
        "x = x_0 + sum_{j=1}^{p} S^j P_N y_{j-1} (finite sum, exact up to the working precision)".into(),
        "bound 2 c d delta / (1 - t)".into(),
    ])
}

fn report(
    mode: ShadowMode,
    chain: &Pseudotrajectory,
    x: WideVec,
    devs: Vec<f64>,
    bound: f64,
    precision: usize,
    provenance: Vec<String>,
) -> Result<ShadowReport> {
    let max_deviation = max_of(&devs);
    Ok(ShadowReport {
        mode,
        segment: Segment { start_index: chain.start_index, steps: chain.len() },
        grade: chain.grade,
        delta: chain.delta,
        shadow_point: x.to_seq()?,
        shadow_point_exact: x,
        deviations: devs,
        max_deviation,
        bound_used: bound,
        bound_holds: max_deviation <= bound * (1.0 + BOUND_SLACK),
        periodic_residual: None,
        residual_bound: None,
        truncation_tolerance: None,
        truncation_terms: None,
        working_precision: precision,
        provenance,
    })
}

/// Periodic point of the `p`-periodic defect sequence, truncated so that each series tail,
/// pushed through `T^p`, stays below `tol/2`.
pub fn shadow_periodic(cycle: &Pseudotrajectory, cert: &GHCertificate, op: &Operator, tol: f64) -> Result<ShadowReport> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    if !cycle.periodic {
        return Err(Error::Pseudotrajectory("chain is not periodic".into()));
    }
    let g = check_inputs(cycle, cert, op)?;
    let p = cycle.len();
    let (c, d, t) = (g.c, cert.d, g.t);
    let split = &cert.splitting;
    let b = max_of(&cycle.defect_norms()?);
    let tp = t.powi(p as i32);
    // N series Σ_{j≥1} S^j P_N y_{(j−1) mod p}: keep Q blocks of p terms.
    let tail_n = |q: usize| c * d * b * t.powi((q * p) as i32 + 1) / (1.0 - t);
    // M series Σ_{k≥0} T^{kp} Σ_{j<p} T^j P_M y_{p−j−1}: keep K blocks.
    let tail_m = |k: usize| c * d * b * t.powi((k * p) as i32) / (1.0 - t);
    let mut q = 1;
    while tail_n(q) * (1.0 + 1.0 / tp) > 0.45 * tol {
        q += 1;
    }
    let mut k = 1;
    while tail_m(k) * (1.0 + tp) > 0.45 * tol {
        k += 1;
    }
    // Rounding in the divisions is amplified by at most `growth^p` when `T^p` is applied; the extra
    // bits keep it below a tenth of `tol`.
    let rounding_bits = ((cycle.delta / (0.1 * tol)).log2().ceil().max(0.0) as usize) + p * growth_bits(op) + 64;
    let precision = cycle.working_precision() + rounding_bits;

    // A = Σ_{i=1}^p S^i P_N y_{i−1}, then Σ_{q'<Q} S^{q'p} A.
    let mut a = WideVec::zero();
    for y in cycle.defects.iter().rev() {
        a = split.project_n_wide(&a.add(&split.project_n_wide(y)).apply_inverse(op, precision)?);
    }
    let mut n_sum = WideVec::zero();
    let mut term = a;
    for _ in 0..q {
        n_sum = n_sum.add(&term);
        for _ in 0..p {
            term = split.project_n_wide(&term.apply_inverse(op, precision)?);
        }
    }
    // B = Σ_{j<p} T^j P_M y_{p−j−1}, then Σ_{k'<K} T^{k'p} B.
    let mut bsum = WideVec::zero();
    for y in &cycle.defects {
        bsum = bsum.apply(op)?.add(&split.project_m_wide(y));
    }
    let mut m_sum = WideVec::zero();
    let mut term = bsum;
    for _ in 0..k {
        m_sum = m_sum.add(&term);
        for _ in 0..p {
            term = term.apply(op)?;
        }
    }
    let x = cycle.points[0].add(&n_sum).sub(&m_sum);

    let mut tpx = x.clone();
    for _ in 0..p {
        tpx = tpx.apply(op)?;
    }
    let residual = tpx.sub(&x).eval(&cycle.family, cycle.grade)?;
    let devs = deviations(cycle, &x, cycle.grade, precision)?;
    let bound = 3.0 * c * d * cycle.delta / (1.0 - t) + tol;
    let mut r = report(ShadowMode::Periodic, cycle, x, devs, bound, precision, vec![
        "x = x_0 + sum_{j>=1} S^j P_N y_{j-1} - sum_{j<p} sum_{k>=0} T^{kp+j} P_M y_{p-j-1}, defects repeated with period p".into(),
        format!("truncation: {q} blocks (N series) and {k} blocks (M series) of p = {p} terms"),
        format!(
            "residual bound tol: tail_N (1 + t^-p) = {:e} and tail_M (1 + t^p) = {:e} each <= 0.45 tol, rounding <= 0.1 tol",
            tail_n(q) * (1.0 + 1.0 / tp),
            tail_m(k) * (1.0 + tp)
        ),
        "deviation bound 3 c d delta / (1 - t) + tol".into(),
    ])?;
    r.periodic_residual = Some(residual);
    r.residual_bound = Some(tol);
    r.truncation_tolerance = Some(tol);
    r.truncation_terms = Some(q.max(k) * p);
    r.bound_holds &= residual <= tol;
    Ok(r)
}

/// `x = x_0 + Σ_{j=1}^m S^j P_N y_{j−1} + Σ_{j=1}^m T^j P_M z_{j−1}` over a segment `[−m, m]`,
/// with backward defects `z_j := x_{−j−1} − T⁻¹ x_{−j}`.
pub fn shadow_two_sided(pseudo: &Pseudotrajectory, cert: &GHCertificate, op: &Operator, tol: f64) -> Result<ShadowReport> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let g = check_inputs(pseudo, cert, op)?;
    let m = usize::try_from(-pseudo.start_index)
        .map_err(|_| Error::Pseudotrajectory("two-sided segment must contain index 0".into()))?;
    if pseudo.end_index() < 0 {
        return Err(Error::Pseudotrajectory("two-sided segment must contain index 0".into()));
    }
    let fwd_steps = pseudo.end_index() as usize;
    let precision = pseudo.working_precision() + 64;
    let split = &cert.splitting;
    let x0 = pseudo.point(0).expect("index 0 present");
    let ys = &pseudo.defects[m..];
    // z_j = x_{−j−1} − T⁻¹ x_{−j} = −T⁻¹ y_{−j−1}
    let zs: Vec<WideVec> = (0..m)
        .map(|j| pseudo.defects[m - 1 - j].apply_inverse(op, precision).map(|v| v.neg()))
        .collect::<Result<_>>()?;
    let mut u = WideVec::zero();
    for y in ys.iter().rev() {
        u = split.project_n_wide(&u.add(&split.project_n_wide(y)).apply_inverse(op, precision)?);
    }
    let mut v = WideVec::zero();
    for z in zs.iter().rev() {
        v = v.add(&split.project_m_wide(z)).apply(op)?;
    }
    let x = x0.add(&u).add(&v);
    let fam = &pseudo.family;
    let ymax = max_of(&ys.iter().map(|y| y.eval(fam, pseudo.grade)).collect::<Result<Vec<_>>>()?);
    let zmax = max_of(&zs.iter().map(|z| z.eval(fam, pseudo.grade)).collect::<Result<Vec<_>>>()?);
    let w = ymax.max(zmax);
    let devs = deviations(pseudo, &x, pseudo.grade, precision)?;
    let bound = g.c * cert.d * (1.0 + 2.0 * g.t) * w / (1.0 - g.t);
    let mut r = report(ShadowMode::TwoSided, pseudo, x, devs, bound, precision, vec![
        format!("segment [-{m}, {fwd_steps}]; defects outside the segment are zero, so both sums are finite"),
        "u = sum_j S^j P_N y_{j-1}, v = sum_j T^j P_M z_{j-1}".into(),
        format!("bound c d (1 + 2t) W / (1 - t) with W = max(max ||y||, max ||z||) = {w:e}"),
    ])?;
    r.truncation_tolerance = Some(tol);
    r.truncation_terms = Some(m.max(fwd_steps));
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DeviationTrace {
    pub start_index: i64,
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// Pure measurement of `‖x_i − T^i x‖_grade` along the chain.
pub fn verify_shadowing(pseudo: &Pseudotrajectory, candidate: &WideVec, op: &Operator, grade: usize) -> Result<DeviationTrace> {
    if &pseudo.operator != op {
        return Err(Error::CertificateMismatch("chain was generated by a different operator".into()));
    }
    let precision = pseudo.working_precision() + 64;
    let devs = deviations(pseudo, candidate, grade, precision)?;
    Ok(DeviationTrace { start_index: pseudo.start_index, max_deviation: max_of(&devs), deviations: devs })
}

/// Both sides of `x_m − T^m x = Σ_{j<m} T^j P_M y_{m−j−1} − Σ_{j=1}^{p−m} S^j P_N y_{m+j−1}`.
pub fn telescoping_sides(
    chain: &Pseudotrajectory,
    cert: &GHCertificate,
    x: &WideVec,
    m: usize,
) -> Result<(WideVec, WideVec)> {
    let op = &chain.operator;
    cert.check_operator(op)?;
    let p = chain.len();
    if m > p || chain.start_index != 0 {
        return Err(Error::Parameter(format!("index {m} outside the chain 0..={p}")));
    }
    let precision = chain.working_precision() + 64;
    let split = &cert.splitting;
    let mut tmx = x.clone();
    for _ in 0..m {
        tmx = tmx.apply(op)?;
    }
    let lhs = chain.points[m].sub(&tmx);
    let mut rhs = WideVec::zero();
    for j in 0..m {
        let mut term = split.project_m_wide(&chain.defects[m - j - 1]);
        for _ in 0..j {
            term = term.apply(op)?;
        }
        rhs = rhs.add(&term);
    }
    for j in 1..=p - m {
        let mut term = split.project_n_wide(&chain.defects[m + j - 1]);
        for _ in 0..j {
            term = split.project_n_wide(&term.apply_inverse(op, precision)?);
        }
        rhs = rhs.sub(&term);
    }
    Ok((lhs, rhs))
}

/// Why a counterexample cycle cannot be shadowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FailureCertificate {
    pub n: u32,
    pub peak_norm: f64,
    /// `max_j ‖x_j − 0‖`: distance of the cycle from the only periodic orbit.
    pub distance_from_zero_orbit: f64,
    pub defect_norms: Vec<f64>,
    /// Checked by coordinate propagation on the cycle's hull.
    pub only_periodic_point_is_zero: bool,
    /// `distance_from_zero_orbit > 1`.
    pub one_shadowing_fails: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Counterexample {
    pub cycle: Pseudotrajectory,
    pub failure: FailureCertificate,
}

/// `B_w` with `w_n = 1/2` for `n ≤ 0` and `2` for `n ≥ 1`.
pub fn counterexample_operator() -> ShiftOperator {
    use crate::operators::{TailRule, WeightSequence};
    let w = WeightSequence::from_slice(0, &[0.5, 2.0], TailRule::Constant { value: 0.5 }, TailRule::Constant { value: 2.0 })
        .expect("valid weights");
    ShiftOperator::backward(w)
}

/// `(0, δe_n, 2δe_{n−1}, …, 2^nδe_0, 2^{n−1}δe_{−1}, …, δe_{−n}, 0)` with the least `n` such that `2^nδ > 1`.
pub fn counterexample_cycle(delta: f64) -> Result<Counterexample> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let mut n = 0u32;
    while delta * 2f64.powi(n as i32) <= 1.0 {
        n += 1;
    }
    let op: Operator = counterexample_operator().into();
    let fam = SeminormFamily::Lp { p: 2.0 };
    let mut points = vec![WideVec::zero()];
    for i in 0..=2 * n {
        let e = n as i64 - i as i64;
        let v = delta * 2f64.powi(i.min(2 * n - i) as i32);
        points.push(WideVec::from(&SeqVec::from_pairs([(e, v)])?));
    }
    points.push(WideVec::zero());
    let cycle = Pseudotrajectory::from_points(&op, &fam, 1, delta, points, true, 0)?;
    let norms: Vec<f64> = cycle.points.iter().map(|x| x.eval(&fam, 1)).collect::<Result<_>>()?;
    let peak = max_of(&norms);
    let hull = IndexWindow::new(-(n as i64) - 1, n as i64 + 1)?;
    let only_zero = (1..=cycle.len()).all(|p| periodic_points_trivial(&counterexample_operator(), hull, p));
    Ok(Counterexample {
        failure: FailureCertificate {
            n,
            peak_norm: peak,
            distance_from_zero_orbit: peak,
            defect_norms: cycle.defect_norms()?,
            only_periodic_point_is_zero: only_zero,
            one_shadowing_fails: only_zero && peak > 1.0,
        },
        cycle,
    })
}

/// Whether `T^p x = x` forces `x = 0` for `x` supported in `window`, by propagating zeros:
/// `(T^p x)_j` only reads `x_{j−σp}`, so coordinates whose source lies outside the window
/// vanish, and the rest follow one step at a time.
pub fn periodic_points_trivial(op: &ShiftOperator, window: IndexWindow, p: usize) -> bool {
    if p == 0 {
        return false;
    }
    let shift = op.direction.sigma() * p as i64;
    let idx: Vec<i64> = if shift > 0 { window.indices().collect() } else { window.indices().rev().collect() };
    let mut zero = std::collections::BTreeSet::new();
    for j in idx {
        let src = j - shift;
        // x_j = (∏ w) x_src with a nonzero weight product.
        let weights_nonzero = (0..p as i64).all(|i| op.weights.value(src + i * op.direction.sigma()) != 0.0);
        if weights_nonzero && (!window.contains(src) || zero.contains(&src)) {
            zero.insert(j);
        }
    }
    zero.len() as u128 == window.width()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AdversarialReport {
    pub delta: f64,
    pub marked_site: String,
    /// Grid functions `f_0, …, f_k` in site order.
    pub chain: Vec<Vec<f64>>,
    /// `sup |f_j − φ f_{j−1}|` over the grid.
    pub defect_sups: Vec<f64>,
    /// `f_j(z₀)` from the recursion.
    pub values_at_marked: Vec<f64>,
    /// Least `k` with `|f_k(z₀)| ≥ 2 + |f_0(z₀)|`, from the recursion.
    pub escape_index: Option<usize>,
    /// Least `k` with `kδ ≥ 2`.
    pub closed_form_escape: u64,
}

/// `f_0 := 0`, `f_j := φ f_{j−1} + φ(z₀)^{j−1} δ`, run until the orbit at `z₀` escapes.
/// The recursion is evaluated exactly, so the escape index is not disturbed by summation rounding.
pub fn adversarial_mult_chain(op: &MultiplicationOperator, delta: f64, max_steps: usize) -> Result<AdversarialReport> {
    op.check()?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let marked = op.marked.as_ref().ok_or_else(|| Error::Parameter("no marked site".into()))?;
    let z = op.site_index(&marked.label).ok_or_else(|| Error::Parameter(format!("unknown site {:?}", marked.label)))?;
    if op.sites[z].modulus != 1.0 {
        return Err(Error::Parameter(format!("marked site needs |phi| = 1, got {}", op.sites[z].modulus)));
    }
    let mut k = (2.0 / delta).ceil().max(1.0) as u64;
    while k > 1 && (k - 1) as f64 * delta >= 2.0 {
        k -= 1;
    }
    while (k as f64) * delta < 2.0 {
        k += 1;
    }
    let phi: Vec<Wide> = (0..op.sites.len()).map(|i| wide(op.value(i))).collect();
    let d = wide(delta);
    let two = wide(2.0);
    let round = |f: &[Wide]| f.iter().map(|v| v.to_f64().value()).collect::<Vec<f64>>();
    let mut f = vec![Wide::ZERO; op.sites.len()];
    let mut chain = vec![round(&f)];
    let mut defect_sups = Vec::new();
    let mut values = vec![0.0];
    let mut escape = None;
    let mut unit = Wide::ONE; // φ(z₀)^{j−1}
    for j in 1..=max_steps {
        let step = &unit * &d;
        f = f.iter().zip(&phi).map(|(v, p)| v * p + &step).collect();
        // f_j − φ f_{j−1} is the constant φ(z₀)^{j−1} δ.
        defect_sups.push(step.to_f64().value().abs());
        values.push(f[z].to_f64().value());
        chain.push(round(&f));
        unit = &unit * &phi[z];
        let fz = &f[z];
        let abs = if fz < &Wide::ZERO { -fz.clone() } else { fz.clone() };
        if abs >= two {
            escape = Some(j);
            break;
        }
    }
    Ok(AdversarialReport {
        delta,
        marked_site: marked.label.clone(),
        chain,
        defect_sups,
        values_at_marked: values,
        escape_index: escape,
        closed_form_escape: k,
    })
}
