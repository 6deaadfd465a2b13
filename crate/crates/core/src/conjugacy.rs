//! Bounded perturbations `S = T + g`, the split series `Ψ⁻¹`, the semiconjugacy `φ = I + Ψ⁻¹(T − S)`
//! and ball-supported radial homeomorphisms.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::hyperbolicity::{op_norm_bound, GHCertificate};
use crate::operators::Operator;
use crate::spaces::{IndexWindow, SeminormFamily, SeqVec};
use crate::{Error, Result};

/// Sample-based checks see only finitely many points, so they cannot tell a uniformly continuous
/// bounded perturbation from a merely continuous bounded one.
pub const UNIFORM_CONTINUITY_NOTE: &str =
    "sample-based verification cannot distinguish uniformly continuous bounded maps from continuous bounded maps";

/// A bounded map `X → X` in serializable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundedMap {
    /// `x ↦ v`.
    Constant { value: SeqVec },
    /// `g(x)_j = ψ(x_j)` for `j` in `window`, `0` elsewhere; `ψ` interpolates `knots` linearly and is
    /// constant beyond the first and last knot. Coordinatewise, so `lipschitz` bounds `g` in every
    /// solid seminorm.
    CoordinateTable { window: IndexWindow, knots: Vec<[f64; 2]>, lipschitz: f64 },
    /// `Σ coef · map`.
    Combination { terms: Vec<Term> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    pub map: BoundedMap,
}

fn interpolate(knots: &[[f64; 2]], s: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if s <= first[0] {
        return first[1];
    }
    if s >= last[0] {
        return last[1];
    }
    let i = knots.partition_point(|k| k[0] <= s) - 1;
    let (a, b) = (knots[i], knots[i + 1]);
    a[1] + (s - a[0]) * ((b[1] - a[1]) / (b[0] - a[0]))
}

impl BoundedMap {
    pub fn zero() -> Self {
        BoundedMap::Constant { value: SeqVec::zero() }
    }

    pub fn scaled(&self, coef: f64) -> BoundedMap {
        BoundedMap::Combination { terms: vec![Term { coef, map: self.clone() }] }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            BoundedMap::Constant { .. } => Ok(()),
            BoundedMap::CoordinateTable { knots, lipschitz, .. } => {
                if knots.is_empty() {
                    return Err(Error::Parameter("table has no knots".into()));
                }
                if knots.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("table knots must be finite".into()));
                }
                let mut slope = 0.0_f64;
                for w in knots.windows(2) {
                    if !(w[1][0] > w[0][0]) {
                        return Err(Error::Parameter("table knots must be strictly increasing".into()));
                    }
                    slope = slope.max(((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs());
                }
                if !(lipschitz.is_finite() && *lipschitz >= slope * (1.0 - 1e-12)) {
                    return Err(Error::Parameter(format!("stated Lipschitz constant {lipschitz} is below the table slope {slope}")));
                }
                Ok(())
            }
            BoundedMap::Combination { terms } => {
                for t in terms {
                    if !t.coef.is_finite() {
                        return Err(Error::Parameter("combination coefficient must be finite".into()));
                    }
                    t.map.check()?;
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: &SeqVec) -> Result<SeqVec> {
        match self {
            BoundedMap::Constant { value } => Ok(value.clone()),
            BoundedMap::CoordinateTable { window, knots, .. } => {
                SeqVec::from_fn(*window, |j| interpolate(knots, x.coeff(j)))
            }
            BoundedMap::Combination { terms } => {
                let mut out = SeqVec::zero();
                for t in terms {
                    out = SeqVec::axpy(t.coef, &t.map.eval(x)?, &out)?;
                }
                Ok(out)
            }
        }
    }

    /// Lipschitz constant in any solid seminorm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            BoundedMap::Constant { .. } => 0.0,
            BoundedMap::CoordinateTable { lipschitz, .. } => *lipschitz,
            BoundedMap::Combination { terms } => terms.iter().map(|t| t.coef.abs() * t.map.lipschitz()).sum(),
        }
    }

    /// Upper bound for `sup_x ‖g(x)‖_k`.
    pub fn sup_norm(&self, fam: &SeminormFamily, k: usize) -> Result<f64> {
        match self {
            BoundedMap::Constant { value } => fam.eval(value, k),
            BoundedMap::CoordinateTable { window, knots, .. } => {
                let peak = knots.iter().fold(0.0_f64, |m, v| m.max(v[1].abs()));
                fam.eval(&SeqVec::from_fn(*window, |_| peak)?, k)
            }
            BoundedMap::Combination { terms } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.coef.abs() * t.map.sup_norm(fam, k)?;
                }
                Ok(s)
            }
        }
    }
}

/// `S x = T x + g(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PerturbedMap {
    pub base: Operator,
    pub perturbation: BoundedMap,
}

impl PerturbedMap {
    pub fn new(base: Operator, perturbation: BoundedMap) -> Result<Self> {
        base.check()?;
        perturbation.check()?;
        Ok(PerturbedMap { base, perturbation })
    }

    pub fn apply(&self, x: &SeqVec) -> Result<SeqVec> {
        self.base.apply(x)?.add(&self.perturbation.eval(x)?)
    }

    /// `L · ‖T⁻¹‖` at grade `k`; `0` when `g` is constant.
    pub fn contraction_factor(&self, fam: &SeminormFamily, k: usize) -> Result<f64> {
        let l = self.perturbation.lipschitz();
        if l == 0.0 {
            return Ok(0.0);
        }
        let inv = op_norm_bound(&self.base, fam, k, true)
            .ok_or_else(|| Error::Parameter("no closed-form bound for the inverse operator at this grade".into()))?;
        Ok(l * inv)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Inversion {
    pub x: SeqVec,
    pub iterations: usize,
    pub last_step: f64,
    pub contraction_factor: f64,
}

const MAX_ITERATIONS: usize = 10_000;

/// `S⁻¹ y` by the iteration `x ← T⁻¹(y − g(x))`, stopped once a step is below `tol`.
pub fn invert_perturbed(s: &PerturbedMap, y: &SeqVec, fam: &SeminormFamily, k: usize, tol: f64) -> Result<Inversion> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let q = s.contraction_factor(fam, k)?;
    if q >= 1.0 {
        return Err(Error::NotContractive { product: q });
    }
    let mut x = s.base.apply_inverse(y)?;
    for it in 1..=MAX_ITERATIONS {
        let next = s.base.apply_inverse(&y.sub(&s.perturbation.eval(&x)?)?)?;
        let step = fam.eval(&next.sub(&x)?, k)?;
        x = next;
        if step < tol {
            return Ok(Inversion { x, iterations: it, last_step: step, contraction_factor: q });
        }
    }
    let step = fam.eval(&s.base.apply_inverse(&y.sub(&s.perturbation.eval(&x)?)?)?.sub(&x)?, k)?;
    Err(Error::NoConvergence { iterations: MAX_ITERATIONS, step })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PsiInverse {
    pub value: SeqVec,
    /// Terms kept in each series.
    pub terms: usize,
    pub phi_bound: f64,
    /// `c·d·t^K·B/(1−t)` per series.
    pub tail_bound: f64,
    /// `P_N(value) ∈ T⁻¹(N)`, checked coordinatewise.
    pub in_m_plus_tinv_n: bool,
}

/// `Ψ⁻¹(ϕ)(x) = Σ_{k≥0} T^k P_M ϕ(R^{−k−1}x) − Σ_{k≥1} T^{−k} P_N ϕ(R^{k−1}x)`, both series cut at the
/// least `K` with `c·d·t^K·B/(1−t) < tol`.
pub fn psi_inverse(
    phi: &BoundedMap,
    r: &PerturbedMap,
    cert: &GHCertificate,
    x: &SeqVec,
    alpha: usize,
    tol: f64,
) -> Result<PsiInverse> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    phi.check()?;
    let fam = &cert.family;
    let g = cert.constants(alpha)?;
    let op = &cert.operator;
    let split = &cert.splitting;
    let b = phi.sup_norm(fam, g.beta)?;
    let tail = |k: usize| g.c * cert.d * g.t.powi(k as i32) * b / (1.0 - g.t);
    let mut terms = 0;
    while tail(terms) >= tol {
        terms += 1;
    }
    let inv_tol = tol * 1e-3;

    let mut m_part = SeqVec::zero();
    let mut n_part = SeqVec::zero();
    if terms > 0 {
        // R^{−k−1} x for k < K, and R^{k−1} x for 1 ≤ k ≤ K.
        let mut back = Vec::with_capacity(terms);
        let mut p = x.clone();
        for _ in 0..terms {
            p = invert_perturbed(r, &p, fam, g.beta, inv_tol)?.x;
            back.push(p.clone());
        }
        let mut fwd = Vec::with_capacity(terms);
        let mut p = x.clone();
        for _ in 0..terms {
            fwd.push(p.clone());
            p = r.apply(&p)?;
        }
        for pk in back.iter().rev() {
            m_part = split.project_m(&phi.eval(pk)?).add(&op.apply(&m_part)?)?;
        }
        for pk in fwd.iter().rev() {
            n_part = op.apply_inverse(&split.project_n(&phi.eval(pk)?).add(&n_part)?)?;
        }
    }
    let value = m_part.sub(&n_part)?;
    let tn = op.apply(&split.project_n(&value))?;
    let in_m_plus_tinv_n = tn.iter().all(|(j, v)| v == 0.0 || split.in_n(j));
    Ok(PsiInverse { value, terms, phi_bound: b, tail_bound: tail(terms), in_m_plus_tinv_n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ConjugacyPoint {
    pub x: SeqVec,
    pub phi_x: SeqVec,
    /// `‖φ(x) − x‖_α`.
    pub displacement: f64,
    pub terms: usize,
    /// `sup ‖g‖_β`.
    pub perturbation_bound: f64,
    /// `c·d·(1+t)·B/(1−t)`: bound on `‖φ(x) − x‖_α` before truncation.
    pub displacement_bound: f64,
    /// `2·c·d·t^K·B`: the truncated series leaves `T∘φ − φ∘S = T^K P_M ϕ(S^{−K}x) + T^{−K} P_N ϕ(S^K x)`.
    pub residual_bound: f64,
}

/// `φ(x) = x + Ψ⁻¹(T − S)(x)` with `T − S = −g`.
pub fn conjugacy_map(cert: &GHCertificate, s: &PerturbedMap, x: &SeqVec, alpha: usize, tol: f64) -> Result<ConjugacyPoint> {
    if s.base != cert.operator {
        return Err(Error::CertificateMismatch("perturbed map is built on a different operator".into()));
    }
    let phi = s.perturbation.scaled(-1.0);
    let psi = psi_inverse(&phi, s, cert, x, alpha, tol)?;
    let g = cert.constants(alpha)?;
    let phi_x = x.add(&psi.value)?;
    let b = psi.phi_bound;
    Ok(ConjugacyPoint {
        displacement: cert.family.eval(&psi.value, alpha)?,
        x: x.clone(),
        phi_x,
        terms: psi.terms,
        perturbation_bound: b,
        displacement_bound: g.c * cert.d * (1.0 + g.t) * b / (1.0 - g.t),
        residual_bound: 2.0 * g.c * cert.d * g.t.powi(psi.terms as i32) * b,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SemiconjugacyCheck {
    pub grade: usize,
    pub residuals: Vec<f64>,
    /// `max(‖T(φ(x))‖, ‖φ(S(x))‖)`, the scale of the rounding in each residual.
    pub magnitudes: Vec<f64>,
    pub max_residual: f64,
}

/// `‖T(φ(x)) − φ(S(x))‖_grade` over the samples.
pub fn verify_semiconjugacy(
    t: &Operator,
    s: &PerturbedMap,
    phi: impl Fn(&SeqVec) -> Result<SeqVec>,
    samples: &[SeqVec],
    fam: &SeminormFamily,
    grade: usize,
) -> Result<SemiconjugacyCheck> {
    let mut residuals = Vec::with_capacity(samples.len());
    let mut magnitudes = Vec::with_capacity(samples.len());
    for x in samples {
        let lhs = t.apply(&phi(x)?)?;
        let rhs = phi(&s.apply(x)?)?;
        residuals.push(fam.eval(&lhs.sub(&rhs)?, grade)?);
        magnitudes.push(fam.eval(&lhs, grade)?.max(fam.eval(&rhs, grade)?));
    }
    let max_residual = residuals.iter().fold(0.0_f64, |m, r| m.max(*r));
    Ok(SemiconjugacyCheck { grade, residuals, magnitudes, max_residual })
}

/// `h(x) = x₀ + φ(1 + k‖u‖)/(1 + k‖u‖) · (x − x₀)` with `u = (x − x₀)/r`, moving `a` to `b` along the ray
/// from `x₀`; `φ` interpolates `(1, 1)`, `(1 + k‖u_a‖, λ(1 + k‖u_a‖))`, `(1 + k, 1 + k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RadialHomeo {
    pub center: SeqVec,
    pub radius: f64,
    pub family: SeminormFamily,
    pub grade: usize,
    pub k: u64,
    pub lambda: f64,
    pub knots: [[f64; 2]; 3],
}

/// `b − x₀ = λ(a − x₀)`, or `None` if `a − x₀` and `b − x₀` are not positively proportional.
fn ray_ratio(da: &SeqVec, db: &SeqVec) -> Option<f64> {
    let (j, v) = da.iter().max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))?;
    if v == 0.0 {
        return None;
    }
    let lambda = db.coeff(j) / v;
    let scale = da.max_abs().max(db.max_abs());
    let hull = da.window().hull(&db.window());
    let aligned = hull.indices().all(|i| (db.coeff(i) - lambda * da.coeff(i)).abs() <= 1e-12 * scale);
    (lambda > 0.0 && aligned).then_some(lambda)
}

impl RadialHomeo {
    fn norm(&self, x: &SeqVec) -> Result<f64> {
        Ok(self.family.eval(&x.sub(&self.center)?, self.grade)? / self.radius)
    }

    fn phi(&self, s: f64) -> f64 {
        if s >= self.knots[2][0] {
            return s;
        }
        interpolate(&self.knots, s)
    }

    /// `ψ(τ) = φ(1 + kτ)τ/(1 + kτ)`.
    pub fn psi(&self, tau: f64) -> f64 {
        let s = 1.0 + self.k as f64 * tau;
        self.phi(s) * tau / s
    }

    /// `ψ⁻¹(ρ)` for `ρ ∈ [0, 1)`: on each linear piece of `φ` this is the positive root of a quadratic.
    pub fn psi_inverse(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let k = self.k as f64;
        let seg = if rho < self.psi((self.knots[1][0] - 1.0) / k) { 0 } else { 1 };
        let (p0, p1) = (self.knots[seg], self.knots[seg + 1]);
        let m = (p1[1] - p0[1]) / (p1[0] - p0[0]);
        // ρ(1 + kτ) = (a + m(1 + kτ))τ with a = v₀ − m s₀
        let a = p0[1] - m * p0[0];
        let qa = m * k;
        let qb = a + m - rho * k;
        let disc = (qb * qb + 4.0 * qa * rho).sqrt();
        if qb >= 0.0 {
            2.0 * rho / (qb + disc)
        } else {
            (disc - qb) / (2.0 * qa)
        }
    }

    pub fn apply(&self, x: &SeqVec) -> Result<SeqVec> {
        let n = self.norm(x)?;
        if n == 0.0 || n >= 1.0 {
            return Ok(x.clone());
        }
        let s = 1.0 + self.k as f64 * n;
        let d = x.sub(&self.center)?;
        self.center.add(&d.scaled(self.phi(s) / s)?)
    }

    pub fn inverse_apply(&self, y: &SeqVec) -> Result<SeqVec> {
        let rho = self.norm(y)?;
        if rho == 0.0 || rho >= 1.0 {
            return Ok(y.clone());
        }
        let tau = self.psi_inverse(rho);
        let d = y.sub(&self.center)?;
        self.center.add(&d.scaled(tau / rho)?)
    }
}

fn check_ball(fam: &SeminormFamily, grade: usize, center: &SeqVec, radius: f64, pts: &[&SeqVec]) -> Result<()> {
    fam.check()?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    for p in pts {
        let n = fam.eval(&p.sub(center)?, grade)?;
        if !(n < radius) {
            return Err(Error::Parameter(format!("point at distance {n} is not inside the ball of radius {radius}")));
        }
    }
    Ok(())
}

/// The single radial map about `center` taking `a` to `b`, with the least admissible `k ≥ 1`
/// (`1 < λ(1 + k‖a − x₀‖/r) < 1 + k`).
pub fn radial_homeo(center: &SeqVec, radius: f64, fam: &SeminormFamily, grade: usize, a: &SeqVec, b: &SeqVec) -> Result<RadialHomeo> {
    check_ball(fam, grade, center, radius, &[a, b])?;
    let da = a.sub(center)?;
    let na = fam.eval(&da, grade)? / radius;
    if na == 0.0 {
        return Err(Error::Parameter("a must not lie in the kernel ball around the center".into()));
    }
    let lambda = ray_ratio(&da, &b.sub(center)?)
        .ok_or_else(|| Error::Parameter("b - center is not a positive multiple of a - center".into()))?;
    let admissible = |k: f64| {
        let v = lambda * (1.0 + k * na);
        1.0 < v && v < 1.0 + k
    };
    // λ‖u_a‖ = ‖u_b‖ < 1 makes every large k admissible.
    let k = (1..=1u64 << 40)
        .find(|k| admissible(*k as f64))
        .ok_or_else(|| Error::Parameter(format!("no admissible k for lambda = {lambda}")))?;
    let kf = k as f64;
    let s = 1.0 + kf * na;
    Ok(RadialHomeo {
        center: center.clone(),
        radius,
        family: fam.clone(),
        grade,
        k,
        lambda,
        knots: [[1.0, 1.0], [s, lambda * s], [1.0 + kf, 1.0 + kf]],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HomeoStep {
    pub map: RadialHomeo,
    /// Apply the inverse map instead.
    pub inverse: bool,
}

/// Composition of radial maps, applied in order.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CompositeHomeo {
    pub steps: Vec<HomeoStep>,
}

impl CompositeHomeo {
    pub fn apply(&self, x: &SeqVec) -> Result<SeqVec> {
        let mut y = x.clone();
        for s in &self.steps {
            y = if s.inverse { s.map.inverse_apply(&y)? } else { s.map.apply(&y)? };
        }
        Ok(y)
    }

    pub fn inverse_apply(&self, y: &SeqVec) -> Result<SeqVec> {
        let mut x = y.clone();
        for s in self.steps.iter().rev() {
            x = if s.inverse { s.map.apply(&x)? } else { s.map.inverse_apply(&x)? };
        }
        Ok(x)
    }

    pub fn then(mut self, other: CompositeHomeo) -> CompositeHomeo {
        self.steps.extend(other.steps);
        self
    }
}

/// A map of the ball around `center` taking `a` to `center`, through the auxiliary center
/// `x₀′ = x₀ − t·(a − x₀)/‖a − x₀‖`, `t = (r − ‖a − x₀‖)/3`, `r′ = r − t`.
pub fn homeo_to_center(center: &SeqVec, radius: f64, fam: &SeminormFamily, grade: usize, a: &SeqVec) -> Result<CompositeHomeo> {
    check_ball(fam, grade, center, radius, &[a])?;
    let da = a.sub(center)?;
    let na = fam.eval(&da, grade)?;
    if na == 0.0 {
        return Ok(CompositeHomeo::default());
    }
    let t = (radius - na) / 3.0;
    let aux = center.sub(&da.scaled(t / na)?)?;
    let map = radial_homeo(&aux, radius - t, fam, grade, a, center)?;
    Ok(CompositeHomeo { steps: vec![HomeoStep { map, inverse: false }] })
}

/// A map of the ball taking `a` to `b`: both are sent to a nearby auxiliary center and `h = g⁻¹ ∘ f`.
pub fn ball_homeo(center: &SeqVec, radius: f64, fam: &SeminormFamily, grade: usize, a: &SeqVec, b: &SeqVec) -> Result<CompositeHomeo> {
    check_ball(fam, grade, center, radius, &[a, b])?;
    if a == b {
        return Ok(CompositeHomeo::default());
    }
    let na = fam.eval(&a.sub(center)?, grade)?;
    let nb = fam.eval(&b.sub(center)?, grade)?;
    let slack = radius - na.max(nb);
    // Move the center off the kernel directions of a and b if needed.
    let mut eps = slack / 3.0;
    for n in [na, nb] {
        if n > 0.0 {
            eps = eps.min(n / 2.0);
        }
    }
    let aux = if na > 0.0 && nb > 0.0 {
        center.clone()
    } else {
        let j = (-64..=64)
            .find(|j| fam.eval(&SeqVec::basis(*j), grade).is_ok_and(|n| n > 0.0))
            .ok_or(Error::ZeroSeminorm)?;
        let e = SeqVec::basis(j);
        center.add(&e.scaled(eps / fam.eval(&e, grade)?)?)?
    };
    let inner = if aux == *center { radius } else { radius - eps };
    let f = homeo_to_center(&aux, inner, fam, grade, a)?;
    let g = homeo_to_center(&aux, inner, fam, grade, b)?;
    let g_inv = CompositeHomeo { steps: g.steps.into_iter().rev().map(|s| HomeoStep { inverse: !s.inverse, ..s }).collect() };
    Ok(f.then(g_inv))
}

/// One leg of a waypoint path: a ball containing consecutive waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Ball {
    pub center: SeqVec,
    pub radius: f64,
}

/// Chains ball maps along `points[0] → points[1] → …`, the `i`-th leg supported in `balls[i]`.
pub fn path_homeo(points: &[SeqVec], balls: &[Ball], fam: &SeminormFamily, grade: usize) -> Result<CompositeHomeo> {
    if points.len() != balls.len() + 1 {
        return Err(Error::Parameter(format!("{} waypoints need {} balls, got {}", points.len(), points.len().saturating_sub(1), balls.len())));
    }
    let mut h = CompositeHomeo::default();
    for (leg, ball) in points.windows(2).zip(balls) {
        h = h.then(ball_homeo(&ball.center, ball.radius, fam, grade, &leg[0], &leg[1])?);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolicity::{delta_for_epsilon, detect_split, DeltaMode};
    use crate::operators::{ShiftOperator, TailRule, WeightSequence};
    use crate::spaces::{random_vector, SeminormFamily};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l2() -> SeminormFamily {
        SeminormFamily::Lp { p: 2.0 }
    }

    fn sd() -> SeminormFamily {
        SeminormFamily::RapidDecrease
    }

    fn seq(pairs: &[(i64, f64)]) -> SeqVec {
        SeqVec::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn constant(pairs: &[(i64, f64)]) -> BoundedMap {
        BoundedMap::Constant { value: seq(pairs) }
    }

    fn split_shift(a: f64) -> Operator {
        let c = |v| TailRule::Constant { value: v };
        let w = WeightSequence::from_slice(-1, &[1.0 / a, a], c(1.0 / a), c(a)).unwrap();
        ShiftOperator::forward(w).into()
    }

    fn cert(op: &Operator, fam: &SeminormFamily, k: usize) -> GHCertificate {
        detect_split(op, fam, &[k]).unwrap().certificate().unwrap()
    }

    fn table(l: f64) -> BoundedMap {
        BoundedMap::CoordinateTable {
            window: IndexWindow::new(-2, 2).unwrap(),
            knots: vec![[-1.0, -0.5 * l], [0.0, 0.0], [1.0, 0.5 * l], [2.0, 0.0]],
            lipschitz: l,
        }
    }

    #[test]
    fn bounded_maps() {
        let t = table(0.02);
        t.check().unwrap();
        let x = seq(&[(-3, 5.0), (0, 0.5), (1, 3.0), (2, -4.0)]);
        assert_eq!(t.eval(&x).unwrap(), seq(&[(0, 0.005), (2, -0.01)]));
        assert_eq!(t.lipschitz(), 0.02);
        let bad = BoundedMap::CoordinateTable { window: IndexWindow::point(0), knots: vec![[0.0, 0.0], [1.0, 1.0]], lipschitz: 0.5 };
        assert!(bad.check().is_err());
        let comb = BoundedMap::Combination { terms: vec![Term { coef: 2.0, map: t.clone() }, Term { coef: -1.0, map: constant(&[(0, 1.0)]) }] };
        assert_eq!(comb.eval(&x).unwrap(), seq(&[(0, -0.99), (2, -0.02)]));
        assert_relative_eq!(comb.sup_norm(&l2(), 1).unwrap(), 2.0 * 0.01 * 5f64.sqrt() + 1.0, max_relative = 1e-15);
    }

    #[test]
    fn inversion() {
        let t = Operator::scale(2.0).unwrap();
        let y = seq(&[(0, 3.0), (4, -1.0)]);
        let s = PerturbedMap::new(t.clone(), BoundedMap::zero()).unwrap();
        assert_eq!(invert_perturbed(&s, &y, &l2(), 1, 1e-12).unwrap().x, t.apply_inverse(&y).unwrap());
        let c = seq(&[(0, 1.0), (1, 0.5)]);
        let s = PerturbedMap::new(t.clone(), BoundedMap::Constant { value: c.clone() }).unwrap();
        let inv = invert_perturbed(&s, &y, &l2(), 1, 1e-12).unwrap();
        assert_eq!(inv.x, y.sub(&c).unwrap().scaled(0.5).unwrap());
        assert!(inv.iterations <= 2);

        let op = split_shift(0.25);
        let s = PerturbedMap::new(op.clone(), table(0.02)).unwrap();
        let inv = invert_perturbed(&s, &y, &sd(), 1, 1e-10).unwrap();
        let res = sd().eval(&s.apply(&inv.x).unwrap().sub(&y).unwrap(), 1).unwrap();
        assert!(res < 10.0 * 1e-10, "{res}");

        let s = PerturbedMap::new(op, table(0.2)).unwrap();
        assert!(matches!(invert_perturbed(&s, &y, &sd(), 1, 1e-10), Err(Error::NotContractive { .. })));
    }

    #[test]
    fn psi_inverse_examples() {
        let t = Operator::scale(2.0).unwrap();
        let g = cert(&t, &l2(), 1);
        let r = PerturbedMap::new(t.clone(), constant(&[(0, 0.3)])).unwrap();
        let x = seq(&[(1, 1.0)]);
        let zero = psi_inverse(&BoundedMap::zero(), &r, &g, &x, 1, 1e-12).unwrap();
        assert!(zero.value.is_zero() && zero.terms == 0);
        let c = seq(&[(0, 0.7), (2, -0.1)]);
        let p = psi_inverse(&BoundedMap::Constant { value: c.scaled(-1.0).unwrap() }, &r, &g, &x, 1, 1e-12).unwrap();
        assert!(l2().eval(&p.value.sub(&c).unwrap(), 1).unwrap() < 1e-12);
        assert!(p.in_m_plus_tinv_n);

        let op = split_shift(0.25);
        let g = cert(&op, &sd(), 2);
        let r = PerturbedMap::new(op.clone(), BoundedMap::zero()).unwrap();
        let p = psi_inverse(&constant(&[(0, 1.0)]), &r, &g, &x, 2, 1e-10).unwrap();
        // Σ_k T^k e₀ = Σ_k 4^{−k} e_k
        for (j, v) in p.value.iter() {
            assert!(j >= 0);
            assert_eq!(v, 0.25f64.powi(j as i32));
        }
        assert!(p.in_m_plus_tinv_n);
        let p = psi_inverse(&constant(&[(-3, 1.0)]), &r, &g, &x, 2, 1e-10).unwrap();
        assert!(p.in_m_plus_tinv_n && p.value.iter().all(|(j, _)| j <= -4));
    }

    #[test]
    fn closed_form_conjugacy() {
        let t = Operator::scale(2.0).unwrap();
        let g = cert(&t, &l2(), 1);
        let c = seq(&[(0, 0.25)]);
        let s = PerturbedMap::new(t.clone(), BoundedMap::Constant { value: c.clone() }).unwrap();
        let x = seq(&[(0, 1.5), (3, -2.0)]);
        let p = conjugacy_map(&g, &s, &x, 1, 1e-14).unwrap();
        assert!(l2().eval(&p.phi_x.sub(&x.add(&c).unwrap()).unwrap(), 1).unwrap() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<SeqVec> = (0..10).map(|_| random_vector(&mut rng, IndexWindow::new(-3, 3).unwrap(), 2.0).unwrap()).collect();
        let chk = verify_semiconjugacy(&t, &s, |x| Ok(conjugacy_map(&g, &s, x, 1, 1e-14)?.phi_x), &samples, &l2(), 1).unwrap();
        assert!(chk.max_residual <= 1e-12, "{}", chk.max_residual);
        let id = verify_semiconjugacy(&t, &s, |x| Ok(x.clone()), &samples, &l2(), 1).unwrap();
        assert_relative_eq!(id.max_residual, 0.25, max_relative = 1e-12);
        let plain = PerturbedMap::new(t.clone(), BoundedMap::zero()).unwrap();
        let none = verify_semiconjugacy(&t, &plain, |x| Ok(x.clone()), &samples, &l2(), 1).unwrap();
        assert_eq!(none.max_residual, 0.0);
        let p = conjugacy_map(&g, &plain, &x, 1, 1e-12).unwrap();
        assert_eq!(p.phi_x, x);
    }

    #[test]
    fn split_shift_conjugacy_residuals() {
        let op = split_shift(0.25);
        let g = cert(&op, &sd(), 2);
        let eps = 0.1;
        let delta = delta_for_epsilon(&g, eps, 2, DeltaMode::Conjugacy).unwrap().delta;
        let v = seq(&[(-1, 1.0), (0, -0.5), (2, 0.25)]);
        let v = v.scaled(0.9 * delta / sd().eval(&v, 2).unwrap()).unwrap();
        let s = PerturbedMap::new(op.clone(), BoundedMap::Constant { value: v }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_vector(&mut rng, IndexWindow::new(-5, 5).unwrap(), 1.0).unwrap();
            let p = conjugacy_map(&g, &s, &x, 2, 1e-10).unwrap();
            assert!(p.displacement < eps && p.displacement <= p.displacement_bound);
            let chk = verify_semiconjugacy(&op, &s, |x| Ok(conjugacy_map(&g, &s, x, 2, 1e-10)?.phi_x), &[x], &sd(), 2).unwrap();
            assert!(chk.max_residual < p.residual_bound, "{} vs {}", chk.max_residual, p.residual_bound);
            assert!(p.residual_bound < 1e-10);
        }
    }

    #[test]
    fn lipschitz_perturbation_conjugacy() {
        let op = split_shift(0.25);
        let g = cert(&op, &sd(), 1);
        let s = PerturbedMap::new(op.clone(), table(0.01)).unwrap();
        let x = seq(&[(0, 0.5), (1, -0.3), (-1, 0.8)]);
        let p = conjugacy_map(&g, &s, &x, 1, 1e-8).unwrap();
        assert!(p.displacement <= p.displacement_bound);
        let chk = verify_semiconjugacy(&op, &s, |x| Ok(conjugacy_map(&g, &s, x, 1, 1e-8)?.phi_x), &[x], &sd(), 1).unwrap();
        assert!(chk.max_residual < p.residual_bound + 1e-9, "{} vs {}", chk.max_residual, p.residual_bound);
    }

    #[test]
    fn mismatched_base_rejected() {
        let op = split_shift(0.25);
        let g = cert(&op, &sd(), 1);
        let s = PerturbedMap::new(Operator::scale(2.0).unwrap(), BoundedMap::zero()).unwrap();
        assert!(matches!(conjugacy_map(&g, &s, &SeqVec::zero(), 1, 1e-8), Err(Error::CertificateMismatch(_))));
    }

    #[test]
    fn radial_example() {
        let x0 = SeqVec::zero();
        let a = seq(&[(0, 0.2)]);
        let b = seq(&[(0, 0.4)]);
        let h = radial_homeo(&x0, 1.0, &l2(), 1, &a, &b).unwrap();
        assert_eq!(h.k, 2);
        assert_eq!(h.lambda, 2.0);
        assert_eq!(h.knots[0], [1.0, 1.0]);
        assert_relative_eq!(h.knots[1][0], 1.4, max_relative = 1e-15);
        assert_relative_eq!(h.knots[1][1], 2.8, max_relative = 1e-15);
        assert_eq!(h.knots[2], [3.0, 3.0]);
        assert!(l2().eval(&h.apply(&a).unwrap().sub(&b).unwrap(), 1).unwrap() <= 1e-12);
        let out = seq(&[(0, 0.9), (5, 0.9)]);
        assert_eq!(h.apply(&out).unwrap(), out);
        assert_eq!(h.apply(&x0).unwrap(), x0);
        let same = radial_homeo(&x0, 1.0, &l2(), 1, &a, &a).unwrap();
        let y = seq(&[(0, 0.3), (1, -0.2)]);
        assert!(l2().eval(&same.apply(&y).unwrap().sub(&y).unwrap(), 1).unwrap() < 1e-15);
        assert!(radial_homeo(&x0, 1.0, &l2(), 1, &a, &seq(&[(1, 0.2)])).is_err());
        assert!(radial_homeo(&x0, 1.0, &l2(), 1, &a, &seq(&[(0, -0.2)])).is_err());
    }

    #[test]
    fn minimal_k_is_admissible_and_least() {
        for (na, lambda) in [(0.2, 2.0), (0.5, 0.1), (0.05, 19.0), (0.9, 1.05), (0.3, 0.5)] {
            let h = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &seq(&[(0, na)]), &seq(&[(0, na * lambda)])).unwrap();
            let ok = |k: f64| 1.0 < lambda * (1.0 + k * na) && lambda * (1.0 + k * na) < 1.0 + k;
            assert!(ok(h.k as f64));
            assert!((1..h.k).all(|k| !ok(k as f64)));
        }
    }

    #[test]
    fn general_ball_maps() {
        let x0 = seq(&[(0, 1.0)]);
        let a = seq(&[(0, 1.3), (1, 0.2)]);
        let b = seq(&[(0, 0.8), (2, -0.2)]);
        let h = ball_homeo(&x0, 1.0, &sd(), 1, &a, &b).unwrap();
        assert!(sd().eval(&h.apply(&a).unwrap().sub(&b).unwrap(), 1).unwrap() < 1e-12);
        let far = seq(&[(0, 3.0)]);
        assert_eq!(h.apply(&far).unwrap(), far);
        // a at the center
        let h = ball_homeo(&x0, 1.0, &sd(), 1, &x0, &b).unwrap();
        assert!(sd().eval(&h.apply(&x0).unwrap().sub(&b).unwrap(), 1).unwrap() < 1e-12);

        let pts = vec![seq(&[(0, -0.5)]), seq(&[(0, 0.5)]), seq(&[(0, 1.5), (1, 0.5)])];
        let balls = vec![Ball { center: SeqVec::zero(), radius: 1.0 }, Ball { center: seq(&[(0, 1.0)]), radius: 1.5 }];
        let h = path_homeo(&pts, &balls, &l2(), 1).unwrap();
        assert!(l2().eval(&h.apply(&pts[0]).unwrap().sub(&pts[2]).unwrap(), 1).unwrap() < 1e-12);
    }

    #[test]
    fn radial_roundtrip_samples() {
        let h = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &seq(&[(0, 0.2)]), &seq(&[(0, 0.4)])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = IndexWindow::new(-2, 2).unwrap();
        for i in 0..200 {
            let x = random_vector(&mut rng, w, if i % 2 == 0 { 0.4 } else { 1.2 }).unwrap();
            let y = h.apply(&x).unwrap();
            let back = h.inverse_apply(&y).unwrap();
            assert!(l2().eval(&back.sub(&x).unwrap(), 1).unwrap() < 1e-9);
            let fwd = h.apply(&h.inverse_apply(&x).unwrap()).unwrap();
            assert!(l2().eval(&fwd.sub(&x).unwrap(), 1).unwrap() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let h = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &seq(&[(0, 0.2)]), &seq(&[(0, 0.4)])).unwrap();
        let back: RadialHomeo = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);
        let s = PerturbedMap::new(split_shift(0.5), table(0.01)).unwrap();
        let back: PerturbedMap = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn psi_linearity(alpha in -3.0f64..3.0, l1 in 0.0f64..0.1, l2v in 0.0f64..0.1, seed in any::<u64>()) {
            let op = split_shift(0.25);
            let g = cert(&op, &sd(), 1);
            let r = PerturbedMap::new(op.clone(), constant(&[(0, 0.01)])).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vector(&mut rng, IndexWindow::new(-3, 3).unwrap(), 1.0).unwrap();
            let (f1, f2) = (table(l1), BoundedMap::CoordinateTable { window: IndexWindow::new(0, 3).unwrap(), knots: vec![[0.0, 0.0], [1.0, l2v]], lipschitz: l2v });
            let tol = 1e-9;
            let combo = BoundedMap::Combination { terms: vec![Term { coef: alpha, map: f1.clone() }, Term { coef: 1.0, map: f2.clone() }] };
            let lhs = psi_inverse(&combo, &r, &g, &x, 1, tol).unwrap().value;
            let p1 = psi_inverse(&f1, &r, &g, &x, 1, tol).unwrap().value;
            let p2 = psi_inverse(&f2, &r, &g, &x, 1, tol).unwrap().value;
            let rhs = SeqVec::axpy(alpha, &p1, &p2).unwrap();
            prop_assert!(sd().eval(&lhs.sub(&rhs).unwrap(), 1).unwrap() <= 2.0 * (alpha.abs() + 2.0) * tol);
        }

        #[test]
        fn radial_roundtrip(na in 0.01f64..0.95, frac in 0.01f64..0.99, px in -1.5f64..1.5, py in -1.5f64..1.5) {
            let nb = frac;
            let a = seq(&[(0, na)]);
            let b = seq(&[(0, nb)]);
            let h = radial_homeo(&SeqVec::zero(), 1.0, &l2(), 1, &a, &b).unwrap();
            prop_assert!(l2().eval(&h.apply(&a).unwrap().sub(&b).unwrap(), 1).unwrap() <= 1e-12);
            let x = seq(&[(0, px), (1, py)]);
            let back = h.inverse_apply(&h.apply(&x).unwrap()).unwrap();
            prop_assert!(l2().eval(&back.sub(&x).unwrap(), 1).unwrap() <= 1e-9);
            if l2().eval(&x, 1).unwrap() >= 1.0 {
                prop_assert_eq!(h.apply(&x).unwrap(), x);
            }
        }
    }
}
