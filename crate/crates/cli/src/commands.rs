//! The three experiment commands. Each returns a report value plus an [`Outcome`]; file output
//! and the manifest are handled by the caller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use shadowlab::conjugacy::{
    conjugacy_map, path_homeo, verify_semiconjugacy, CompositeHomeo, ConjugacyPoint, PerturbedMap, UNIFORM_CONTINUITY_NOTE,
};
use shadowlab::hyperbolicity::{
    classify_expansivity_shift, classify_multiplication, delta_for_epsilon, detect_growth_split, detect_split, op_norm_bound,
    orbit_growth_scan, DeltaMode, ExpansivityVerdict, GHCertificate, GrowthDetection, MultiplicationVerdict, OrbitScan,
    SplitDetection, DEFAULT_DIVERGENCE_BOUND,
};
use shadowlab::operators::Operator;
use shadowlab::shadowing::{
    adversarial_mult_chain, counterexample_cycle, make_chain, make_closing_cycle, make_two_sided, shadow_finite,
    shadow_periodic, shadow_two_sided, AdversarialReport, ChainOptions, Counterexample, ShadowReport,
};
use shadowlab::spaces::{random_vector, IndexWindow, SeminormFamily, SeqVec};
use shadowlab::Error;

use crate::config::{ClassifyConfig, ConjugacyConfig, ConjugacyTask, OperatorSpec, ShadowConfig, ShadowModeSpec};

/// Exit-code contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Results obtained (including expected negative results).
    Ok,
    Inconclusive,
    BadInput,
    /// A bound that is a theorem failed: an implementation bug.
    BoundViolated,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::Inconclusive => 1,
            Outcome::BadInput => 2,
            Outcome::BoundViolated => 3,
        }
    }
}

/// A command failure that still has an exit code.
#[derive(Debug)]
pub struct Failure {
    pub outcome: Outcome,
    pub message: String,
    /// Structured details written alongside the message.
    pub details: Option<serde_json::Value>,
}

impl Failure {
    pub fn bad_input(message: impl Into<String>) -> Self {
        Failure { outcome: Outcome::BadInput, message: message.into(), details: None }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let outcome = match &e {
            Error::NoCertificate(_) | Error::NoConvergence { .. } => Outcome::Inconclusive,
            Error::CertificateMismatch(_) | Error::Pseudotrajectory(_) => Outcome::BoundViolated,
            _ => Outcome::BadInput,
        };
        Failure { outcome, message: e.to_string(), details: None }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn require_space(space: &Option<SeminormFamily>) -> CmdResult<&SeminormFamily> {
    space.as_ref().ok_or_else(|| Failure::bad_input("this operator needs a `space`"))
}

fn require_sequence_op(spec: &OperatorSpec) -> CmdResult<Operator> {
    let op = spec.sequence_operator().ok_or_else(|| Failure::bad_input("expected a shift or scale operator"))?;
    op.check()?;
    Ok(op)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScanSummary {
    /// `None` for `e_0`, else the index of the random vector.
    pub vector: Option<usize>,
    pub scans: Vec<OrbitScan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClassifyReport {
    pub operator: OperatorSpec,
    pub space: Option<SeminormFamily>,
    pub grades: Vec<usize>,
    pub split: Option<SplitDetection>,
    pub growth: Option<GrowthDetection>,
    pub expansivity: Option<ExpansivityVerdict>,
    pub orbit_scans: Vec<ScanSummary>,
    pub multiplication: Option<MultiplicationVerdict>,
    pub conclusive: bool,
}

pub fn classify(cfg: &ClassifyConfig) -> CmdResult<(ClassifyReport, Outcome)> {
    if let OperatorSpec::Multiplication(m) = &cfg.operator {
        let verdict = classify_multiplication(m, &cfg.compacts)?;
        let report = ClassifyReport {
            operator: cfg.operator.clone(),
            space: cfg.space.clone(),
            grades: cfg.grades.clone(),
            split: None,
            growth: None,
            expansivity: None,
            orbit_scans: Vec::new(),
            multiplication: Some(verdict),
            conclusive: true,
        };
        return Ok((report, Outcome::Ok));
    }
    let op = require_sequence_op(&cfg.operator)?;
    let fam = require_space(&cfg.space)?;
    let split = detect_split(&op, fam, &cfg.grades)?;
    let growth = detect_growth_split(&op, fam, &cfg.grades)?;
    let expansivity = match &op {
        Operator::Shift(s) => Some(classify_expansivity_shift(s, fam, &cfg.grades, cfg.horizon)?),
        Operator::Scale { .. } => None,
    };
    let mut vectors = vec![(None, SeqVec::basis(0))];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = IndexWindow::new(-4, 4)?;
    for i in 0..cfg.scan_vectors {
        vectors.push((Some(i), random_vector(&mut rng, w, 1.0)?));
    }
    let orbit_scans = vectors
        .par_iter()
        .map(|(i, x)| {
            let mut scans = Vec::new();
            for &k in &cfg.grades {
                for inverse in [false, true] {
                    scans.push(orbit_growth_scan(&op, fam, x, k, cfg.horizon, inverse, DEFAULT_DIVERGENCE_BOUND)?);
                }
            }
            Ok(ScanSummary { vector: *i, scans })
        })
        .collect::<shadowlab::Result<Vec<_>>>()?;
    let certified = matches!(split, SplitDetection::Certificate(_));
    let conclusive = certified || expansivity.as_ref().is_none_or(|v| v.conclusive);
    let report = ClassifyReport {
        operator: cfg.operator.clone(),
        space: cfg.space.clone(),
        grades: cfg.grades.clone(),
        split: Some(split),
        growth: Some(growth),
        expansivity,
        orbit_scans,
        multiplication: None,
        conclusive,
    };
    let outcome = if conclusive { Outcome::Ok } else { Outcome::Inconclusive };
    Ok((report, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Trial {
    pub seed: u64,
    pub report: ShadowReport,
    /// `max_deviation < ε` (when ε is given).
    pub within_epsilon: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Aggregate {
    pub trials: usize,
    pub min_deviation: f64,
    pub median_deviation: f64,
    pub max_deviation: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Aggregate { trials: n, min_deviation: v[0], median_deviation: median, max_deviation: v[n - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ShadowBatchReport {
    pub mode: ShadowModeSpec,
    pub grade: usize,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub certificate: Option<GHCertificate>,
    pub trials: Vec<Trial>,
    pub aggregate: Option<Aggregate>,
    pub counterexample: Option<Counterexample>,
    pub adversarial: Option<AdversarialReport>,
    pub all_bounds_hold: bool,
    pub notes: Vec<String>,
}

fn positive(name: &str, v: f64) -> CmdResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Failure::bad_input(format!("{name} must be positive, got {v}")))
    }
}

pub fn shadow(cfg: &ShadowConfig) -> CmdResult<(ShadowBatchReport, Outcome)> {
    let mut report = ShadowBatchReport {
        mode: cfg.mode,
        grade: cfg.grade,
        epsilon: cfg.epsilon,
        delta: 0.0,
        certificate: None,
        trials: Vec::new(),
        aggregate: None,
        counterexample: None,
        adversarial: None,
        all_bounds_hold: true,
        notes: Vec::new(),
    };
    match cfg.mode {
        ShadowModeSpec::Counterexample => {
            let delta = positive("delta", cfg.delta.ok_or_else(|| Failure::bad_input("counterexample mode needs `delta`"))?)?;
            let ce = counterexample_cycle(delta)?;
            report.delta = delta;
            report.all_bounds_hold = ce.failure.one_shadowing_fails;
            report.notes.push("expected negative result: the cycle cannot be 1-shadowed".into());
            report.counterexample = Some(ce);
            let outcome = if report.all_bounds_hold { Outcome::Ok } else { Outcome::BoundViolated };
            return Ok((report, outcome));
        }
        ShadowModeSpec::Adversarial => {
            let delta = positive("delta", cfg.delta.ok_or_else(|| Failure::bad_input("adversarial mode needs `delta`"))?)?;
            let Some(OperatorSpec::Multiplication(m)) = &cfg.operator else {
                return Err(Failure::bad_input("adversarial mode needs a multiplication operator"));
            };
            let adv = adversarial_mult_chain(m, delta, cfg.length)?;
            report.delta = delta;
            report.all_bounds_hold =
                adv.escape_index.map(|k| k as u64) == Some(adv.closed_form_escape) && adv.defect_sups.iter().all(|d| *d <= delta);
            if adv.escape_index.is_none() {
                report.notes.push(format!("no escape within {} steps; raise `length`", cfg.length));
            }
            report.adversarial = Some(adv);
            let outcome = match (report.all_bounds_hold, report.adversarial.as_ref().and_then(|a| a.escape_index)) {
                (_, None) => Outcome::Inconclusive,
                (true, _) => Outcome::Ok,
                (false, _) => Outcome::BoundViolated,
            };
            return Ok((report, outcome));
        }
        _ => {}
    }

    let spec = cfg.operator.as_ref().ok_or_else(|| Failure::bad_input("synthesis modes need an `operator`"))?;
    let op = require_sequence_op(spec)?;
    let fam = require_space(&cfg.space)?;
    let cert = match detect_split(&op, fam, &[cfg.grade])? {
        SplitDetection::Certificate(c) => c,
        SplitDetection::NoCertificate { reason } => {
            return Err(Failure {
                outcome: Outcome::Inconclusive,
                message: format!("no GH certificate: {reason}"),
                details: Some(serde_json::json!({ "result": "no_certificate", "reason": reason })),
            })
        }
    };
    let delta = match (cfg.delta, cfg.epsilon) {
        (Some(d), _) => positive("delta", d)?,
        (None, Some(eps)) => {
            let mode = match cfg.mode {
                ShadowModeSpec::TwoSided => {
                    let inv = op_norm_bound(&op, fam, cfg.grade, true)
                        .ok_or_else(|| Failure::bad_input("no closed-form bound for the inverse at this grade"))?;
                    DeltaMode::TwoSided { inverse_bound: inv.max(1.0) }
                }
                ShadowModeSpec::Periodic => DeltaMode::Periodic,
                _ => DeltaMode::Finite,
            };
            delta_for_epsilon(&cert, positive("epsilon", eps)?, cfg.grade, mode)?.delta
        }
        (None, None) => return Err(Failure::bad_input("give `epsilon` or `delta`")),
    };
    positive("tol", cfg.tol)?;
    let seeds = cfg.trial_seeds();
    if seeds.is_empty() {
        return Err(Failure::bad_input("need at least one trial"));
    }
    report.delta = delta;
    let x0 = cfg.x0.clone().unwrap_or_else(|| SeqVec::basis(0));
    let opts = ChainOptions { scale: 1.0, window: cfg.window };
    if cfg.mode == ShadowModeSpec::Periodic && cfg.x0.is_some() {
        report.notes.push("periodic cycles are generated from their defects; `x0` is not used".into());
    }
    let trials = seeds
        .par_iter()
        .map(|&seed| {
            let r = match cfg.mode {
                ShadowModeSpec::Finite => {
                    let ch = make_chain(&op, fam, &x0, cfg.length, cfg.grade, delta, seed, &opts)?;
                    shadow_finite(&ch, &cert, &op)?
                }
                ShadowModeSpec::Periodic => {
                    if cfg.length == 0 {
                        return Err(Error::Parameter("period must be at least 1".into()));
                    }
                    let cy = make_closing_cycle(&op, &cert, cfg.length, cfg.grade, delta, seed, &opts)?;
                    shadow_periodic(&cy, &cert, &op, cfg.tol)?
                }
                ShadowModeSpec::TwoSided => {
                    let seg = make_two_sided(&op, fam, &x0, cfg.length, cfg.grade, delta, seed, &opts)?;
                    shadow_two_sided(&seg, &cert, &op, cfg.tol)?
                }
                _ => unreachable!("handled above"),
            };
            let within_epsilon = cfg.epsilon.map(|e| r.max_deviation < e);
            Ok(Trial { seed, report: r, within_epsilon })
        })
        .collect::<shadowlab::Result<Vec<_>>>()?;
    let devs: Vec<f64> = trials.iter().map(|t| t.report.max_deviation).collect();
    report.aggregate = Aggregate::of(&devs);
    report.all_bounds_hold = trials.iter().all(|t| t.report.bound_holds && t.within_epsilon != Some(false));
    report.certificate = Some(cert);
    report.trials = trials;
    let outcome = if report.all_bounds_hold { Outcome::Ok } else { Outcome::BoundViolated };
    Ok((report, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ContractionCheck {
    pub lipschitz: f64,
    pub contraction_factor: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ConjugacySample {
    pub point: ConjugacyPoint,
    pub residual: f64,
    /// `residual_bound` plus `64·ε_mach` times the magnitude of the compared vectors.
    pub allowed: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SemiconjugacyReport {
    pub grade: usize,
    pub tol: f64,
    pub certificate: GHCertificate,
    pub contraction: ContractionCheck,
    pub perturbation_bound: f64,
    /// `(1−t)ε/(2cd)` when ε is given.
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub samples: Vec<ConjugacySample>,
    pub max_residual: f64,
    pub max_displacement: f64,
    pub all_hold: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HomeomorphismReport {
    pub grade: usize,
    pub map: CompositeHomeo,
    /// `‖h(a) − b‖`.
    pub endpoint_error: f64,
    /// Largest `‖g(h(x)) − x‖` and `‖h(g(x)) − x‖` over the samples.
    pub roundtrip_error: f64,
    pub samples: usize,
    /// Samples outside every ball that `h` left unchanged / tested.
    pub outside_fixed: usize,
    pub outside_tested: usize,
    pub all_hold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ConjugacyReport {
    Semiconjugacy(SemiconjugacyReport),
    Homeomorphism(HomeomorphismReport),
}

const ENDPOINT_TOL: f64 = 1e-12;
const ROUNDTRIP_TOL: f64 = 1e-9;

pub fn conjugacy(cfg: &ConjugacyConfig) -> CmdResult<(ConjugacyReport, Outcome)> {
    positive("sample_amplitude", cfg.sample_amplitude)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<SeqVec> =
        (0..cfg.samples).map(|_| random_vector(&mut rng, cfg.sample_window, cfg.sample_amplitude)).collect::<Result<_, _>>()?;
    match &cfg.task {
        ConjugacyTask::Semiconjugacy { operator, space, grade, perturbation, epsilon, tol } => {
            let op = require_sequence_op(operator)?;
            positive("tol", *tol)?;
            let s = PerturbedMap::new(op.clone(), perturbation.clone())?;
            let q = s.contraction_factor(space, *grade)?;
            let contraction = ContractionCheck { lipschitz: perturbation.lipschitz(), contraction_factor: q, admissible: q < 1.0 };
            if !contraction.admissible {
                return Err(Failure {
                    outcome: Outcome::BadInput,
                    message: format!("contraction condition fails: L * |T^-1| = {q} >= 1"),
                    details: Some(serde_json::to_value(&contraction).expect("serializable")),
                });
            }
            let cert = detect_split(&op, space, &[*grade])?.certificate()?;
            let perturbation_bound = perturbation.sup_norm(space, *grade)?;
            let delta = match epsilon {
                Some(e) => Some(delta_for_epsilon(&cert, positive("epsilon", *e)?, *grade, DeltaMode::Conjugacy)?.delta),
                None => None,
            };
            let rows = samples
                .par_iter()
                .map(|x| {
                    let point = conjugacy_map(&cert, &s, x, *grade, *tol)?;
                    let phi = |y: &SeqVec| Ok(conjugacy_map(&cert, &s, y, *grade, *tol)?.phi_x);
                    let chk = verify_semiconjugacy(&op, &s, phi, std::slice::from_ref(x), space, *grade)?;
                    let allowed = point.residual_bound + 64.0 * f64::EPSILON * chk.magnitudes[0];
                    let residual = chk.residuals[0];
                    Ok(ConjugacySample { holds: residual <= allowed, point, residual, allowed })
                })
                .collect::<shadowlab::Result<Vec<_>>>()?;
            let max_residual = rows.iter().fold(0.0_f64, |m, r| m.max(r.residual));
            let max_displacement = rows.iter().fold(0.0_f64, |m, r| m.max(r.point.displacement));
            let mut notes = vec![UNIFORM_CONTINUITY_NOTE.to_string()];
            let mut all_hold = rows.iter().all(|r| r.holds);
            if let (Some(d), Some(e)) = (delta, epsilon) {
                if perturbation_bound < d {
                    all_hold &= max_displacement < *e;
                } else {
                    notes.push(format!("sup |g| = {perturbation_bound:e} is not below delta = {d:e}; the epsilon bound is not guaranteed"));
                }
            }
            let report = SemiconjugacyReport {
                grade: *grade,
                tol: *tol,
                certificate: cert,
                contraction,
                perturbation_bound,
                delta,
                epsilon: *epsilon,
                samples: rows,
                max_residual,
                max_displacement,
                all_hold,
                notes,
            };
            let outcome = if all_hold { Outcome::Ok } else { Outcome::BoundViolated };
            Ok((ConjugacyReport::Semiconjugacy(report), outcome))
        }
        ConjugacyTask::Homeomorphism { space, grade, points, balls } => {
            let h = path_homeo(points, balls, space, *grade)?;
            let (a, b) = match (points.first(), points.last()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Failure::bad_input("need at least one point")),
            };
            let dist = |x: &SeqVec, y: &SeqVec| -> shadowlab::Result<f64> { space.eval(&x.sub(y)?, *grade) };
            let endpoint_error = dist(&h.apply(a)?, b)?;
            let mut roundtrip_error = 0.0_f64;
            let (mut outside_fixed, mut outside_tested) = (0, 0);
            for x in &samples {
                let y = h.apply(x)?;
                roundtrip_error = roundtrip_error.max(dist(&h.inverse_apply(&y)?, x)?);
                roundtrip_error = roundtrip_error.max(dist(&h.apply(&h.inverse_apply(x)?)?, x)?);
                let mut outside = true;
                for ball in balls {
                    outside &= space.eval(&x.sub(&ball.center)?, *grade)? >= ball.radius;
                }
                if outside {
                    outside_tested += 1;
                    outside_fixed += usize::from(y == *x);
                }
            }
            let all_hold = endpoint_error <= ENDPOINT_TOL && roundtrip_error <= ROUNDTRIP_TOL && outside_fixed == outside_tested;
            let report = HomeomorphismReport {
                grade: *grade,
                map: h,
                endpoint_error,
                roundtrip_error,
                samples: samples.len(),
                outside_fixed,
                outside_tested,
                all_hold,
            };
            let outcome = if all_hold { Outcome::Ok } else { Outcome::BoundViolated };
            Ok((ConjugacyReport::Homeomorphism(report), outcome))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let codes: Vec<i32> =
            [Outcome::Ok, Outcome::Inconclusive, Outcome::BadInput, Outcome::BoundViolated].iter().map(|o| o.code()).collect();
        assert_eq!(codes, [0, 1, 2, 3]);
        assert_eq!(Failure::from(Error::NoCertificate("x".into())).outcome, Outcome::Inconclusive);
        assert_eq!(Failure::from(Error::NoConvergence { iterations: 1, step: 1.0 }).outcome, Outcome::Inconclusive);
        assert_eq!(Failure::from(Error::CertificateMismatch("x".into())).outcome, Outcome::BoundViolated);
        assert_eq!(Failure::from(Error::Parameter("x".into())).outcome, Outcome::BadInput);
        assert_eq!(Failure::from(Error::NotContractive { product: 2.0 }).outcome, Outcome::BadInput);
    }

    #[test]
    fn aggregate_median() {
        assert_eq!(Aggregate::of(&[]), None);
        let a = Aggregate::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((a.min_deviation, a.median_deviation, a.max_deviation, a.trials), (1.0, 2.0, 3.0, 3));
        assert_eq!(Aggregate::of(&[4.0, 1.0, 2.0, 3.0]).unwrap().median_deviation, 2.5);
    }

    #[test]
    fn shadow_needs_a_scale() {
        let cfg: ShadowConfig = serde_json::from_value(serde_json::json!({
            "mode": "finite",
            "operator": { "kind": "scale", "factor": 2.0 },
            "space": { "kind": "c0" }
        }))
        .unwrap();
        assert_eq!(shadow(&cfg).unwrap_err().outcome, Outcome::BadInput);
    }

    #[test]
    fn scalar_expansion_shadows_exactly() {
        let cfg: ShadowConfig = serde_json::from_value(serde_json::json!({
            "mode": "finite",
            "operator": { "kind": "scale", "factor": 3.0 },
            "space": { "kind": "lp", "p": 1.0 },
            "epsilon": 0.3,
            "length": 8,
            "trials": 4
        }))
        .unwrap();
        let (r, o) = shadow(&cfg).unwrap();
        assert_eq!(o, Outcome::Ok);
        // t = 1/3, c = d = 1: δ = (2/3)·0.3/3.
        assert!((r.delta - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(r.trials.iter().map(|t| t.seed).collect::<Vec<_>>(), [0, 1, 2, 3]);
        assert!(r.all_bounds_hold);
    }
}
