//! Finite-support sequences and graded seminorm families.
//!
//! A [`SeqVec`] stores a dense coefficient block over an [`IndexWindow`] and is implicitly zero
//! elsewhere. Seminorms never truncate: every sum or supremum runs over the (finite) support.

use std::borrow::Cow;
use std::collections::BTreeMap;

use schemars::{json_schema, JsonSchema, Schema, SchemaGenerator};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::operators::WeightSequence;
use crate::{Error, Result};

pub const DEFAULT_WINDOW_CAP: u64 = 1 << 20;

/// Inclusive integer range `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IndexWindow {
    lo: i64,
    hi: i64,
}

impl IndexWindow {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        Self::with_cap(lo, hi, DEFAULT_WINDOW_CAP)
    }

    pub fn with_cap(lo: i64, hi: i64, cap: u64) -> Result<Self> {
        if lo > hi {
            return Err(Error::EmptyWindow { lo, hi });
        }
        let w = Self { lo, hi };
        check_width(w, cap)?;
        Ok(w)
    }

    pub fn point(j: i64) -> Self {
        Self { lo: j, hi: j }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn width(&self) -> u128 {
        (self.hi as i128 - self.lo as i128 + 1) as u128
    }

    pub fn contains(&self, j: i64) -> bool {
        self.lo <= j && j <= self.hi
    }

    /// Smallest window containing both; not checked against any cap.
    pub fn hull(&self, other: &IndexWindow) -> IndexWindow {
        IndexWindow { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn intersect(&self, other: &IndexWindow) -> Option<IndexWindow> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(IndexWindow { lo, hi })
    }

    pub fn shifted(&self, d: i64) -> IndexWindow {
        IndexWindow { lo: self.lo + d, hi: self.hi + d }
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }
}

fn check_width(w: IndexWindow, cap: u64) -> Result<()> {
    if w.width() > cap as u128 {
        return Err(Error::WindowCap { width: w.width(), cap });
    }
    Ok(())
}

impl Serialize for IndexWindow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for IndexWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [lo, hi] = <[i64; 2]>::deserialize(d)?;
        IndexWindow::new(lo, hi).map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for IndexWindow {
    fn schema_name() -> Cow<'static, str> {
        "IndexWindow".into()
    }

    fn json_schema(_: &mut SchemaGenerator) -> Schema {
        json_schema!({
            "description": "Inclusive index range [lo, hi] with lo <= hi.",
            "type": "array",
            "items": { "type": "integer" },
            "minItems": 2,
            "maxItems": 2
        })
    }
}

/// Finite-support real sequence over ℤ.
///
/// Equality is mathematical: two vectors are equal when all coefficients agree, whatever
/// their windows.
#[derive(Clone, Debug)]
pub struct SeqVec {
    window: IndexWindow,
    coeffs: Vec<f64>,
    cap: u64,
}

impl SeqVec {
    pub fn zero() -> Self {
        Self { window: IndexWindow::point(0), coeffs: vec![0.0], cap: DEFAULT_WINDOW_CAP }
    }

    /// Coordinate vector `e_j`.
    pub fn basis(j: i64) -> Self {
        Self { window: IndexWindow::point(j), coeffs: vec![1.0], cap: DEFAULT_WINDOW_CAP }
    }

    pub fn new(window: IndexWindow, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() as u128 != window.width() {
            return Err(Error::Parameter(format!(
                "{} coefficients for a window of width {}",
                coeffs.len(),
                window.width()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: window.lo + i as i64 });
        }
        Ok(Self { window, coeffs, cap: DEFAULT_WINDOW_CAP })
    }

    pub fn from_fn(window: IndexWindow, f: impl FnMut(i64) -> f64) -> Result<Self> {
        Self::new(window, window.indices().map(f).collect())
    }

    /// Builds a vector from `(index, value)` pairs; repeated indices add up.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i64, f64)>) -> Result<Self> {
        let pairs: Vec<(i64, f64)> = pairs.into_iter().collect();
        let Some(lo) = pairs.iter().map(|p| p.0).min() else {
            return Ok(Self::zero());
        };
        let hi = pairs.iter().map(|p| p.0).max().unwrap_or(lo);
        let window = IndexWindow::new(lo, hi)?;
        let mut coeffs = vec![0.0; window.width() as usize];
        for (j, v) in pairs {
            coeffs[(j - lo) as usize] += v;
        }
        Self::new(window, coeffs)
    }

    pub fn with_cap(mut self, cap: u64) -> Result<Self> {
        check_width(self.window, cap)?;
        self.cap = cap;
        Ok(self)
    }

    pub fn window(&self) -> IndexWindow {
        self.window
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn coeff(&self, j: i64) -> f64 {
        if self.window.contains(j) {
            self.coeffs[(j - self.window.lo) as usize]
        } else {
            0.0
        }
    }

    /// Nonzero coefficients in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let lo = self.window.lo;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(move |(i, v)| (lo + i as i64, *v))
    }

    /// Hull of the nonzero coefficients, `None` for the zero vector.
    pub fn support(&self) -> Option<IndexWindow> {
        let first = self.coeffs.iter().position(|v| *v != 0.0)?;
        let last = self.coeffs.iter().rposition(|v| *v != 0.0)?;
        Some(IndexWindow { lo: self.window.lo + first as i64, hi: self.window.lo + last as i64 })
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|v| *v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same vector stored over its support only.
    pub fn trimmed(&self) -> SeqVec {
        match self.support() {
            None => SeqVec { cap: self.cap, ..SeqVec::zero() },
            Some(s) => {
                let a = (s.lo - self.window.lo) as usize;
                let b = (s.hi - self.window.lo) as usize;
                SeqVec { window: s, coeffs: self.coeffs[a..=b].to_vec(), cap: self.cap }
            }
        }
    }

    /// Coefficientwise map `x_j ↦ f(j, x_j)` over the current window.
    pub fn map_indexed(&self, mut f: impl FnMut(i64, f64) -> f64) -> Result<SeqVec> {
        let lo = self.window.lo;
        let coeffs: Vec<f64> =
            self.coeffs.iter().enumerate().map(|(i, v)| f(lo + i as i64, *v)).collect();
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: lo + i as i64 });
        }
        Ok(SeqVec { window: self.window, coeffs, cap: self.cap }.trimmed())
    }

    pub fn scaled(&self, alpha: f64) -> Result<SeqVec> {
        self.map_indexed(|_, v| alpha * v)
    }

    /// Keeps the coordinates selected by `keep`, zeroing the rest.
    pub fn restrict(&self, mut keep: impl FnMut(i64) -> bool) -> SeqVec {
        let lo = self.window.lo;
        let coeffs =
            self.coeffs.iter().enumerate().map(|(i, v)| if keep(lo + i as i64) { *v } else { 0.0 }).collect();
        SeqVec { window: self.window, coeffs, cap: self.cap }.trimmed()
    }

    /// Translated copy: coefficient `x_j` moves to index `j + d`, multiplied by `f(j)`.
    pub(crate) fn translate_with(&self, d: i64, mut f: impl FnMut(i64) -> f64) -> Result<SeqVec> {
        let Some(s) = self.support() else {
            return Ok(SeqVec { cap: self.cap, ..SeqVec::zero() });
        };
        let window = s.shifted(d);
        let mut coeffs = Vec::with_capacity(s.width() as usize);
        for j in s.indices() {
            let v = self.coeff(j);
            let c = if v == 0.0 { 0.0 } else { f(j) * v };
            if !c.is_finite() {
                return Err(Error::NonFinite { index: j + d });
            }
            coeffs.push(c);
        }
        Ok(SeqVec { window, coeffs, cap: self.cap }.trimmed())
    }

    /// `alpha * x + y`; the result lives on the hull of both supports.
    pub fn axpy(alpha: f64, x: &SeqVec, y: &SeqVec) -> Result<SeqVec> {
        let cap = x.cap.min(y.cap);
        let window = match (x.support(), y.support()) {
            (None, None) => return Ok(SeqVec { cap, ..SeqVec::zero() }),
            (Some(a), None) | (None, Some(a)) => a,
            (Some(a), Some(b)) => a.hull(&b),
        };
        check_width(window, cap)?;
        let mut coeffs = Vec::with_capacity(window.width() as usize);
        for j in window.indices() {
            let c = alpha * x.coeff(j) + y.coeff(j);
            if !c.is_finite() {
                return Err(Error::NonFinite { index: j });
            }
            coeffs.push(c);
        }
        Ok(SeqVec { window, coeffs, cap }.trimmed())
    }

    pub fn add(&self, other: &SeqVec) -> Result<SeqVec> {
        SeqVec::axpy(1.0, self, other)
    }

    pub fn sub(&self, other: &SeqVec) -> Result<SeqVec> {
        SeqVec::axpy(-1.0, other, self)
    }
}

pub fn vec_axpy(alpha: f64, x: &SeqVec, y: &SeqVec) -> Result<SeqVec> {
    SeqVec::axpy(alpha, x, y)
}

pub fn vec_sub(x: &SeqVec, y: &SeqVec) -> Result<SeqVec> {
    x.sub(y)
}

pub fn support(x: &SeqVec) -> Option<IndexWindow> {
    x.support()
}

impl PartialEq for SeqVec {
    fn eq(&self, other: &Self) -> bool {
        let w = self.window.hull(&other.window);
        w.indices().all(|j| self.coeff(j) == other.coeff(j))
    }
}

impl Serialize for SeqVec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Coeffs<'a>(&'a SeqVec);
        impl Serialize for Coeffs<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(None)?;
                for (j, v) in self.0.iter() {
                    m.serialize_entry(&j.to_string(), &v)?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("window", &self.window)?;
        m.serialize_entry("coeffs", &Coeffs(self))?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for SeqVec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            window: IndexWindow,
            coeffs: BTreeMap<String, f64>,
        }
        let raw = Raw::deserialize(d)?;
        let mut coeffs = vec![0.0; raw.window.width() as usize];
        for (k, v) in raw.coeffs {
            let j: i64 = k.parse().map_err(|_| serde::de::Error::custom(format!("bad index {k:?}")))?;
            if !raw.window.contains(j) {
                return Err(serde::de::Error::custom(Error::OutsideWindow {
                    index: j,
                    lo: raw.window.lo,
                    hi: raw.window.hi,
                }));
            }
            coeffs[(j - raw.window.lo) as usize] = v;
        }
        SeqVec::new(raw.window, coeffs).map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for SeqVec {
    fn schema_name() -> Cow<'static, str> {
        "SeqVec".into()
    }

    fn json_schema(g: &mut SchemaGenerator) -> Schema {
        let window = g.subschema_for::<IndexWindow>();
        json_schema!({
            "description": "Finite-support sequence; coefficients keyed by decimal index, zero elsewhere.",
            "type": "object",
            "properties": {
                "window": window,
                "coeffs": {
                    "type": "object",
                    "propertyNames": { "pattern": "^-?[0-9]+$" },
                    "additionalProperties": { "type": "number" }
                }
            },
            "required": ["window", "coeffs"],
            "additionalProperties": false
        })
    }
}

/// Entry rule `(j, k) ↦ a_{j,k}` of a Köthe matrix.
#[derive(Clone, Debug, PartialEq, Serialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KotheMatrix {
    Constant { value: f64 },
    /// `a_{j,k} = (|j|+1)^k`.
    PolynomialGrade,
    /// `a_{j,k} = 1` for `|j| ≤ j_k`, else 0. Without a table `j_k = k`; with one, grades stop
    /// at its length.
    BandIndicator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bands: Option<Vec<u64>>,
    },
    /// `rows[k-1][j-lo]` over `window`.
    Table { window: IndexWindow, rows: Vec<Vec<f64>> },
    /// `a_{j,k} = |v_j|` at every grade.
    WeightedConstant { weights: WeightSequence },
}

// Unit variants ignore `deny_unknown_fields`; parse through empty struct variants instead.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KotheMatrixRepr {
    Constant { value: f64 },
    PolynomialGrade {},
    BandIndicator {
        #[serde(default)]
        bands: Option<Vec<u64>>,
    },
    Table { window: IndexWindow, rows: Vec<Vec<f64>> },
    WeightedConstant { weights: WeightSequence },
}

impl<'de> Deserialize<'de> for KotheMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        KotheMatrixRepr::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

impl TryFrom<KotheMatrixRepr> for KotheMatrix {
    type Error = Error;

    fn try_from(r: KotheMatrixRepr) -> Result<Self> {
        let m = match r {
            KotheMatrixRepr::Constant { value } => KotheMatrix::Constant { value },
            KotheMatrixRepr::PolynomialGrade {} => KotheMatrix::PolynomialGrade,
            KotheMatrixRepr::BandIndicator { bands } => KotheMatrix::BandIndicator { bands },
            KotheMatrixRepr::Table { window, rows } => KotheMatrix::Table { window, rows },
            KotheMatrixRepr::WeightedConstant { weights } => KotheMatrix::WeightedConstant { weights },
        };
        m.check()?;
        Ok(m)
    }
}

impl KotheMatrix {
    /// Structural checks that do not depend on the queried range.
    pub fn check(&self) -> Result<()> {
        match self {
            KotheMatrix::Constant { value } if !(value.is_finite() && *value > 0.0) => {
                Err(Error::Matrix(format!("constant entry must be positive, got {value}")))
            }
            KotheMatrix::BandIndicator { bands: Some(b) } => {
                if b.is_empty() {
                    return Err(Error::Matrix("empty band table".into()));
                }
                if b.windows(2).any(|p| p[1] < p[0]) {
                    return Err(Error::Matrix("band table must be nondecreasing".into()));
                }
                Ok(())
            }
            KotheMatrix::Table { window, rows } => {
                if rows.is_empty() {
                    return Err(Error::Matrix("table has no grades".into()));
                }
                for (k, row) in rows.iter().enumerate() {
                    if row.len() as u128 != window.width() {
                        return Err(Error::Matrix(format!("row {} has wrong length", k + 1)));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Matrix(format!("row {} has non-finite entries", k + 1)));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Highest available grade, `None` when unbounded.
    pub fn max_grade(&self) -> Option<usize> {
        match self {
            KotheMatrix::BandIndicator { bands: Some(b) } => Some(b.len()),
            KotheMatrix::Table { rows, .. } => Some(rows.len()),
            _ => None,
        }
    }

    fn check_grade(&self, k: usize) -> Result<()> {
        let max = self.max_grade();
        if k == 0 || max.is_some_and(|m| k > m) {
            return Err(Error::Grade { grade: k, max });
        }
        Ok(())
    }

    pub fn entry(&self, j: i64, k: usize) -> Result<f64> {
        self.check_grade(k)?;
        Ok(match self {
            KotheMatrix::Constant { value } => *value,
            KotheMatrix::PolynomialGrade => poly_entry(j, k),
            KotheMatrix::BandIndicator { bands } => {
                let jk = match bands {
                    None => k as u64,
                    Some(b) => b[k - 1],
                };
                if j.unsigned_abs() <= jk {
                    1.0
                } else {
                    0.0
                }
            }
            KotheMatrix::Table { window, rows } => {
                if !window.contains(j) {
                    return Err(Error::OutsideTable { index: j });
                }
                rows[k - 1][(j - window.lo) as usize]
            }
            KotheMatrix::WeightedConstant { weights } => weights.weight(j)?.abs(),
        })
    }

    /// Least grade with a positive entry at `j`, if any.
    pub fn first_positive_grade(&self, j: i64) -> Result<Option<usize>> {
        Ok(match self {
            KotheMatrix::Constant { .. } | KotheMatrix::PolynomialGrade | KotheMatrix::WeightedConstant { .. } => {
                Some(1)
            }
            KotheMatrix::BandIndicator { bands: None } => Some((j.unsigned_abs() as usize).max(1)),
            KotheMatrix::BandIndicator { bands: Some(b) } => {
                b.iter().position(|jk| j.unsigned_abs() <= *jk).map(|i| i + 1)
            }
            KotheMatrix::Table { window, rows } => {
                if !window.contains(j) {
                    return Err(Error::OutsideTable { index: j });
                }
                rows.iter().position(|r| r[(j - window.lo) as usize] > 0.0).map(|i| i + 1)
            }
        })
    }
}

pub(crate) fn poly_entry(j: i64, k: usize) -> f64 {
    ((j.unsigned_abs() + 1) as f64).powi(k as i32)
}

/// Exponent of an ℓ^p-type sum; `Sup` is the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Sup,
    Finite(f64),
}

/// Graded family `‖·‖_k`, `k ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeminormFamily {
    Lp { p: f64 },
    C0,
    /// s(ℤ): `Σ (|j|+1)^k |x_j|`.
    RapidDecrease,
    /// λ_p(A, ℤ); `p = 0` selects the supremum.
    KothePrimary { matrix: KotheMatrix, p: f64 },
    /// ω(ℤ): `max_{|j| ≤ k} |x_j|`.
    OmegaProduct,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SeminormFamilyRepr {
    Lp { p: f64 },
    C0 {},
    RapidDecrease {},
    KothePrimary { matrix: KotheMatrix, p: f64 },
    OmegaProduct {},
}

impl<'de> Deserialize<'de> for SeminormFamily {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        SeminormFamilyRepr::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

impl TryFrom<SeminormFamilyRepr> for SeminormFamily {
    type Error = Error;

    fn try_from(r: SeminormFamilyRepr) -> Result<Self> {
        let f = match r {
            SeminormFamilyRepr::Lp { p } => SeminormFamily::Lp { p },
            SeminormFamilyRepr::C0 {} => SeminormFamily::C0,
            SeminormFamilyRepr::RapidDecrease {} => SeminormFamily::RapidDecrease,
            SeminormFamilyRepr::KothePrimary { matrix, p } => SeminormFamily::KothePrimary { matrix, p },
            SeminormFamilyRepr::OmegaProduct {} => SeminormFamily::OmegaProduct,
        };
        f.check()?;
        Ok(f)
    }
}

impl SeminormFamily {
    /// Matrix and exponent this family evaluates with.
    pub fn as_kothe(&self) -> (Cow<'_, KotheMatrix>, Exponent) {
        match self {
            SeminormFamily::Lp { p } => (Cow::Owned(KotheMatrix::Constant { value: 1.0 }), Exponent::Finite(*p)),
            SeminormFamily::C0 => (Cow::Owned(KotheMatrix::Constant { value: 1.0 }), Exponent::Sup),
            SeminormFamily::RapidDecrease => (Cow::Owned(KotheMatrix::PolynomialGrade), Exponent::Finite(1.0)),
            SeminormFamily::KothePrimary { matrix, p } => {
                (Cow::Borrowed(matrix), if *p == 0.0 { Exponent::Sup } else { Exponent::Finite(*p) })
            }
            SeminormFamily::OmegaProduct => {
                (Cow::Owned(KotheMatrix::BandIndicator { bands: None }), Exponent::Sup)
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        let (m, p) = self.as_kothe();
        if let Exponent::Finite(p) = p {
            if !(p.is_finite() && p >= 1.0) {
                return Err(Error::Exponent(p));
            }
        }
        m.check()
    }

    /// True when every grade gives the same norm.
    pub fn grade_independent(&self) -> bool {
        matches!(
            self.as_kothe().0.as_ref(),
            KotheMatrix::Constant { .. } | KotheMatrix::WeightedConstant { .. }
        )
    }

    pub fn max_grade(&self) -> Option<usize> {
        self.as_kothe().0.max_grade()
    }

    /// `‖x‖_k`. Overflow yields `f64::INFINITY` rather than an error.
    pub fn eval(&self, x: &SeqVec, k: usize) -> Result<f64> {
        let (m, p) = self.as_kothe();
        m.check_grade(k)?;
        weighted_norm(x, p, |j| m.entry(j, k))
    }
}

/// Coordinates uniform in `(−amplitude, amplitude)` on `window`.
pub fn random_vector(rng: &mut impl rand::Rng, window: IndexWindow, amplitude: f64) -> Result<SeqVec> {
    use rand::RngExt;
    SeqVec::from_fn(window, |_| rng.random_range(-amplitude..amplitude))
}

/// Random vector rescaled to `‖x‖_k = 1` (redrawn if it lands in the kernel).
pub fn random_unit_vector(rng: &mut impl rand::Rng, window: IndexWindow, fam: &SeminormFamily, k: usize) -> Result<SeqVec> {
    for _ in 0..64 {
        let x = random_vector(rng, window, 1.0)?;
        let n = fam.eval(&x, k)?;
        if n > 0.0 && n.is_finite() {
            return x.scaled(1.0 / n);
        }
    }
    Err(Error::ZeroSeminorm)
}

pub fn seminorm_eval(x: &SeqVec, fam: &SeminormFamily, k: usize) -> Result<f64> {
    fam.eval(x, k)
}

fn weighted_norm(x: &SeqVec, p: Exponent, mut a: impl FnMut(i64) -> Result<f64>) -> Result<f64> {
    match p {
        Exponent::Sup => {
            let mut m: f64 = 0.0;
            for (j, v) in x.iter() {
                m = m.max((v * a(j)?).abs());
            }
            Ok(m)
        }
        Exponent::Finite(1.0) => {
            let mut s = 0.0;
            for (j, v) in x.iter() {
                s += (v * a(j)?).abs();
            }
            Ok(s)
        }
        Exponent::Finite(p) => {
            if !(p.is_finite() && p >= 1.0) {
                return Err(Error::Exponent(p));
            }
            let terms = x.iter().map(|(j, v)| Ok((v * a(j)?).abs())).collect::<Result<Vec<f64>>>()?;
            let m = terms.iter().fold(0.0_f64, |m, t| m.max(*t));
            if m == 0.0 || !m.is_finite() {
                return Ok(m);
            }
            let s: f64 = terms.iter().map(|t| (t / m).powf(p)).sum();
            Ok(m * s.powf(1.0 / p))
        }
    }
}

/// One member of a family, fixed grade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GradedSeminorm {
    pub family: SeminormFamily,
    pub grade: usize,
}

impl GradedSeminorm {
    pub fn eval(&self, x: &SeqVec) -> Result<f64> {
        self.family.eval(x, self.grade)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    Negative { value: f64 },
    /// `a_{j,k} > a_{j,k+1}`.
    NotMonotone { lower: f64, upper: f64 },
    NoPositiveEntry,
    Unavailable { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct KotheViolation {
    pub index: i64,
    pub grade: usize,
    pub violation: ViolationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct KotheReport {
    pub valid: bool,
    pub window: IndexWindow,
    pub max_grade: usize,
    pub violations: Vec<KotheViolation>,
}

/// Checks nonnegativity, grade monotonicity and eventual positivity over `window × 1..=max_grade`.
pub fn kothe_validate(a: &KotheMatrix, window: IndexWindow, max_grade: usize) -> KotheReport {
    let mut violations = Vec::new();
    if let Err(e) = a.check() {
        violations.push(KotheViolation {
            index: window.lo,
            grade: 1,
            violation: ViolationKind::Unavailable { reason: e.to_string() },
        });
    }
    for j in window.indices() {
        let mut prev: Option<f64> = None;
        for k in 1..=max_grade {
            let v = match a.entry(j, k) {
                Ok(v) => v,
                Err(e) => {
                    violations.push(KotheViolation {
                        index: j,
                        grade: k,
                        violation: ViolationKind::Unavailable { reason: e.to_string() },
                    });
                    break;
                }
            };
            if v < 0.0 {
                violations.push(KotheViolation { index: j, grade: k, violation: ViolationKind::Negative { value: v } });
            }
            if let Some(u) = prev {
                if u > v {
                    violations.push(KotheViolation {
                        index: j,
                        grade: k - 1,
                        violation: ViolationKind::NotMonotone { lower: u, upper: v },
                    });
                }
            }
            prev = Some(v);
        }
        match a.first_positive_grade(j) {
            Ok(Some(_)) => {}
            Ok(None) => violations.push(KotheViolation { index: j, grade: 1, violation: ViolationKind::NoPositiveEntry }),
            Err(_) => {}
        }
    }
    KotheReport { valid: violations.is_empty(), window, max_grade, violations }
}
