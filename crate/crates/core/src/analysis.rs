//! Time-valued statistics and risk diagnostics on fixed trajectories: the
//! time cdf, quantile, CVaR, excursion sets, first-order dominance, measure
//! evaluation, and the executable coherence-property suite.
//!
//! A trajectory carries its own quadrature weights; every statistic reads
//! those. Build the weights from a measure's pdf to get pdf-weighted
//! semantics, or uniform weights for plain fraction-of-time readings.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::EvalError;
use crate::measures::{quadrature_weights, MeasureError, QuadRule, QuadratureWeights};
use crate::model::{DisutilityG, MeasureKind, Pdf};

/// Sampled trajectory: support times, values, and normalized quadrature
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: QuadratureWeights,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("trajectory needs >= 2 finite values on strictly increasing times")]
    BadTrajectory,
    #[error("alpha out of range (got {0})")]
    AlphaOutOfRange(f64),
    #[error("trajectories are on different grids or weights")]
    GridMismatch,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("disutility evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        values: Vec<f64>,
        weights: QuadratureWeights,
    ) -> Result<Self, AnalysisError> {
        if times.len() < 2
            || times.len() != values.len()
            || weights.normalized.len() != times.len()
            || times.windows(2).any(|w| !(w[0] < w[1]))
            || values.iter().any(|v| !v.is_finite())
        {
            return Err(AnalysisError::BadTrajectory);
        }
        Ok(Trajectory {
            times,
            values,
            weights,
        })
    }

    /// Trajectory with uniform-pdf weights under `rule`.
    pub fn uniform(times: Vec<f64>, values: Vec<f64>, rule: QuadRule) -> Result<Self, AnalysisError> {
        let weights = quadrature_weights(&Pdf::uniform(), &times, rule)?;
        Trajectory::new(times, values, weights)
    }

    /// Trajectory weighted by `pdf` under `rule`.
    pub fn with_pdf(
        times: Vec<f64>,
        values: Vec<f64>,
        pdf: &Pdf,
        rule: QuadRule,
    ) -> Result<Self, AnalysisError> {
        let weights = quadrature_weights(pdf, &times, rule)?;
        Trajectory::new(times, values, weights)
    }

    fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Weighted fraction of time the trajectory sits at or below `threshold`
/// (non-strict indicator sum).
pub fn time_cdf(traj: &Trajectory, threshold: f64) -> f64 {
    traj.values
        .iter()
        .zip(&traj.weights.normalized)
        .filter(|(v, _)| **v <= threshold)
        .map(|(_, w)| w)
        .sum()
}

/// Smallest trajectory value whose time cdf reaches `alpha`; ties resolve to
/// the smallest qualifying value.
pub fn quantile(traj: &Trajectory, alpha: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AnalysisError::AlphaOutOfRange(alpha));
    }
    let mut sorted = traj.values.clone();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    for v in &sorted {
        if time_cdf(traj, *v) >= alpha {
            return Ok(*v);
        }
    }
    // Normalized mass can undershoot 1 by rounding; the top value is the
    // quantile then.
    Ok(*sorted.last().unwrap())
}

fn sorted_tail_cvar(values: &[f64], normalized: &[f64], alpha: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(normalized.iter().copied())
        .collect();
    pairs.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let tail = 1.0 - alpha;
    let mut remaining = tail;
    let mut acc = 0.0;
    for (v, w) in pairs {
        if remaining <= 0.0 {
            break;
        }
        let take = w.min(remaining);
        acc += v * take;
        remaining -= take;
    }
    acc / tail
}

/// CVaR of the trajectory: the weighted average of its worst `1 - alpha`
/// fraction of time, with the straddling probability atom split fractionally.
pub fn cvar_eval(traj: &Trajectory, alpha: f64) -> Result<f64, AnalysisError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(AnalysisError::AlphaOutOfRange(alpha));
    }
    Ok(sorted_tail_cvar(
        &traj.values,
        &traj.weights.normalized,
        alpha,
    ))
}

/// Excursion intervals of the piecewise-linear interpolant around a
/// threshold. Supports exactly at the threshold belong to both sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionReport {
    pub positive_intervals: Vec<(f64, f64)>,
    pub negative_intervals: Vec<(f64, f64)>,
    /// Fraction of total time spent in the positive excursion set.
    pub positive_fraction: f64,
}

/// Intervals where the piecewise-linear interpolant of (times, values) is
/// >= 0, with crossings located by linear interpolation.
fn nonneg_intervals(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let mut raw: Vec<(f64, f64)> = Vec::new();
    let n = times.len();
    for k in 0..n - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let (a, b) = (values[k], values[k + 1]);
        match (a >= 0.0, b >= 0.0) {
            (true, true) => raw.push((t0, t1)),
            (true, false) => {
                let tc = t0 + (0.0 - a) / (b - a) * (t1 - t0);
                raw.push((t0, tc));
            }
            (false, true) => {
                let tc = t0 + (0.0 - a) / (b - a) * (t1 - t0);
                raw.push((tc, t1));
            }
            (false, false) => {}
        }
    }
    // Merge adjacent/overlapping intervals; keep isolated touch points as
    // degenerate intervals.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (s, e) in raw {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Positive/negative excursion sets of the trajectory around `threshold`.
pub fn excursions(traj: &Trajectory, threshold: f64) -> ExcursionReport {
    let above: Vec<f64> = traj.values.iter().map(|v| v - threshold).collect();
    let below: Vec<f64> = traj.values.iter().map(|v| threshold - v).collect();
    let positive_intervals = nonneg_intervals(&traj.times, &above);
    let negative_intervals = nonneg_intervals(&traj.times, &below);
    let pos_len: f64 = positive_intervals.iter().map(|(s, e)| e - s).sum();
    ExcursionReport {
        positive_intervals,
        negative_intervals,
        positive_fraction: pos_len / traj.span(),
    }
}

/// First-order dominance: `f1` dominates `f2` when its exceedance fraction is
/// at least `f2`'s at every threshold of the merged value set. Requires
/// identical times and weights.
pub fn dominates(f1: &Trajectory, f2: &Trajectory) -> Result<bool, AnalysisError> {
    if f1.times != f2.times || f1.weights.normalized != f2.weights.normalized {
        return Err(AnalysisError::GridMismatch);
    }
    let mut thresholds: Vec<f64> = f1
        .values
        .iter()
        .chain(f2.values.iter())
        .copied()
        .collect();
    thresholds.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    for t in thresholds {
        // 1 - cdf1 >= 1 - cdf2  <=>  cdf1 <= cdf2
        if time_cdf(f1, t) > time_cdf(f2, t) + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimum of a convex function on [a, b].
fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while b - a > tol && iters < 300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    f(0.5 * (a + b))
}

fn weighted_mean(values: &[f64], normalized: &[f64]) -> f64 {
    values.iter().zip(normalized).map(|(v, w)| v * w).sum()
}

/// Evaluate a measure kind on a fixed trajectory using the trajectory's own
/// weights (the kind's pdf applies when the trajectory was built from it).
/// Quantile is permitted here: nothing is optimized over the trajectory.
pub fn measure_eval(traj: &Trajectory, kind: &MeasureKind) -> Result<f64, AnalysisError> {
    let w = &traj.weights;
    match kind {
        MeasureKind::Integral => Ok(traj
            .values
            .iter()
            .zip(&w.raw)
            .map(|(v, r)| v * r)
            .sum()),
        MeasureKind::Expectation(_) => Ok(weighted_mean(&traj.values, &w.normalized)),
        MeasureKind::MeanVariance { lambda, .. } => {
            if !(*lambda >= 0.0) {
                return Err(AnalysisError::Measure(MeasureError::NegativeLambda(
                    *lambda,
                )));
            }
            let mean = weighted_mean(&traj.values, &w.normalized);
            let var: f64 = traj
                .values
                .iter()
                .zip(&w.normalized)
                .map(|(v, wk)| wk * (v - mean) * (v - mean))
                .sum();
            Ok(mean + lambda * var)
        }
        MeasureKind::CVaR { alpha, .. } => cvar_eval(traj, *alpha),
        MeasureKind::Quantile { alpha, .. } => quantile(traj, *alpha),
        MeasureKind::Disutility {
            g,
            translation_invariant,
            ..
        } => disutility_eval(traj, g, *translation_invariant),
    }
}

fn disutility_eval(
    traj: &Trajectory,
    g: &DisutilityG,
    translation_invariant: bool,
) -> Result<f64, AnalysisError> {
    let w = &traj.weights.normalized;
    let lo = traj.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = traj.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1.0);
    match g {
        DisutilityG::CvarExact { alpha } => {
            if !(0.0..1.0).contains(alpha) {
                return Err(AnalysisError::AlphaOutOfRange(*alpha));
            }
            // Rockafellar-Uryasev objective minimized over the threshold;
            // independent of the sorted-tail route in `cvar_eval`.
            let ru = |eta: f64| -> f64 {
                let tail: f64 = traj
                    .values
                    .iter()
                    .zip(w)
                    .map(|(v, wk)| wk * (v - eta).max(0.0))
                    .sum();
                eta + tail / (1.0 - alpha)
            };
            Ok(golden_section_min(ru, lo - range, hi + range, 1e-10))
        }
        DisutilityG::Smooth(expr) => {
            if expr.max_var_index().is_some_and(|m| m > 0) {
                return Err(AnalysisError::Measure(MeasureError::NonUnaryG));
            }
            if !translation_invariant {
                let mut acc = 0.0;
                for (v, wk) in traj.values.iter().zip(w) {
                    acc += wk * expr.evaluate(&[*v])?;
                }
                return Ok(acc);
            }
            let objective = |eta: f64| -> f64 {
                let mut acc = 0.0;
                for (v, wk) in traj.values.iter().zip(w) {
                    match expr.evaluate(&[v - eta]) {
                        Ok(gv) => acc += wk * (v + gv),
                        Err(_) => return f64::INFINITY,
                    }
                }
                if acc.is_nan() {
                    f64::INFINITY
                } else {
                    acc
                }
            };
            let best = golden_section_min(objective, lo - range, hi + range, 1e-10);
            if best.is_finite() {
                Ok(best)
            } else {
                Err(AnalysisError::BadTrajectory)
            }
        }
    }
}

/// Coherence-table rows exercised by the property suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureFamily {
    Expectation,
    MeanVariance,
    Quantile,
    CVaR,
}

impl MeasureFamily {
    pub const ALL: [MeasureFamily; 4] = [
        MeasureFamily::Expectation,
        MeasureFamily::MeanVariance,
        MeasureFamily::Quantile,
        MeasureFamily::CVaR,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MeasureFamily::Expectation => "expectation",
            MeasureFamily::MeanVariance => "mean-variance",
            MeasureFamily::Quantile => "quantile",
            MeasureFamily::CVaR => "cvar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axiom {
    Convexity,
    Monotonicity,
    TranslationInvariance,
    PositiveHomogeneity,
}

impl Axiom {
    pub const ALL: [Axiom; 4] = [
        Axiom::Convexity,
        Axiom::Monotonicity,
        Axiom::TranslationInvariance,
        Axiom::PositiveHomogeneity,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Axiom::Convexity => "convexity",
            Axiom::Monotonicity => "monotonicity",
            Axiom::TranslationInvariance => "translation-invariance",
            Axiom::PositiveHomogeneity => "positive-homogeneity",
        }
    }
}

/// Which axioms each family is expected to satisfy.
pub fn expected_to_hold(family: MeasureFamily, axiom: Axiom) -> bool {
    match (family, axiom) {
        (MeasureFamily::Expectation, _) | (MeasureFamily::CVaR, _) => true,
        (MeasureFamily::MeanVariance, Axiom::Convexity)
        | (MeasureFamily::MeanVariance, Axiom::TranslationInvariance) => true,
        (MeasureFamily::MeanVariance, _) => false,
        (MeasureFamily::Quantile, Axiom::Convexity) => false,
        (MeasureFamily::Quantile, _) => true,
    }
}

#[derive(Debug, Clone)]
pub struct AxiomOutcome {
    pub axiom: Axiom,
    pub holds: bool,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub family: MeasureFamily,
    pub outcomes: Vec<AxiomOutcome>,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub trials: usize,
    pub seed: u64,
    pub families: Vec<FamilyReport>,
}

impl PropertyReport {
    /// True when every observed outcome equals the expected coherence table.
    pub fn matches_expected(&self) -> bool {
        self.families.iter().all(|f| {
            f.outcomes
                .iter()
                .all(|o| o.holds == expected_to_hold(f.family, o.axiom))
        })
    }
}

/// Default measure parameters for the suite: uniform pdf, lambda 1, alpha
/// 0.75 for CVaR, alpha 0.5 for the quantile.
pub fn default_property_measures(family: MeasureFamily) -> MeasureKind {
    match family {
        MeasureFamily::Expectation => MeasureKind::Expectation(Pdf::uniform()),
        MeasureFamily::MeanVariance => MeasureKind::MeanVariance {
            pdf: Pdf::uniform(),
            lambda: 1.0,
        },
        MeasureFamily::Quantile => MeasureKind::Quantile {
            pdf: Pdf::uniform(),
            alpha: 0.5,
        },
        MeasureFamily::CVaR => MeasureKind::CVaR {
            pdf: Pdf::uniform(),
            alpha: 0.75,
        },
    }
}

const AXIOM_TOL: f64 = 1e-8;

fn random_trajectory(rng: &mut ChaCha8Rng) -> Trajectory {
    let n = rng.random_range(2..=32usize);
    let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let normalized: Vec<f64> = raw.iter().map(|w| w / total).collect();
    Trajectory {
        times,
        values,
        weights: QuadratureWeights {
            raw,
            normalized,
            rule: QuadRule::Trapezoid,
        },
    }
}

fn with_values(base: &Trajectory, values: Vec<f64>) -> Trajectory {
    Trajectory {
        times: base.times.clone(),
        values,
        weights: base.weights.clone(),
    }
}

/// Run randomized coherence-axiom trials for each measure family and report
/// which axioms held and the first counterexample otherwise.
pub fn property_suite<F>(measure_for: F, trials: usize, seed: u64) -> PropertyReport
where
    F: Fn(MeasureFamily) -> MeasureKind,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut families = Vec::new();
    for family in MeasureFamily::ALL {
        let kind = measure_for(family);
        let eval = |traj: &Trajectory| -> f64 {
            measure_eval(traj, &kind).expect("suite measures are total on finite trajectories")
        };
        let mut outcomes = Vec::new();
        for axiom in Axiom::ALL {
            let mut counterexample = None;
            for _ in 0..trials.max(1) {
                if let Some(ce) = axiom_violation(axiom, &eval, &mut rng) {
                    counterexample = Some(ce);
                    break;
                }
            }
            outcomes.push(AxiomOutcome {
                axiom,
                holds: counterexample.is_none(),
                counterexample,
            });
        }
        families.push(FamilyReport { family, outcomes });
    }
    PropertyReport {
        trials,
        seed,
        families,
    }
}

fn axiom_violation<E: Fn(&Trajectory) -> f64>(
    axiom: Axiom,
    eval: &E,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    match axiom {
        Axiom::Convexity => {
            let f = random_trajectory(rng);
            let h_values: Vec<f64> = f.values.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
            let h = with_values(&f, h_values);
            let mid_values: Vec<f64> = f
                .values
                .iter()
                .zip(&h.values)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let mid = with_values(&f, mid_values);
            let (mf, mh, mm) = (eval(&f), eval(&h), eval(&mid));
            if mm > 0.5 * (mf + mh) + AXIOM_TOL {
                Some(format!(
                    "midpoint convexity fails: M(mid)={mm:.9} > (M(f)+M(h))/2={:.9} for f={:?}, h={:?}",
                    0.5 * (mf + mh),
                    f.values,
                    h.values
                ))
            } else {
                None
            }
        }
        Axiom::Monotonicity => {
            let f2 = random_trajectory(rng);
            // Mix additive lifts with constant flattening; both dominate f2
            // pointwise.
            let f1_values: Vec<f64> = if rng.random_range(0..4u32) == 0 {
                let top = f2.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                vec![top; f2.values.len()]
            } else {
                f2.values
                    .iter()
                    .map(|v| v + rng.random_range(0.0..2.0))
                    .collect()
            };
            let f1 = with_values(&f2, f1_values);
            let (m1, m2) = (eval(&f1), eval(&f2));
            if m1 < m2 - AXIOM_TOL {
                Some(format!(
                    "monotonicity fails: f1 >= f2 pointwise but M(f1)={m1:.9} < M(f2)={m2:.9} for f1={:?}, f2={:?}",
                    f1.values, f2.values
                ))
            } else {
                None
            }
        }
        Axiom::TranslationInvariance => {
            let f = random_trajectory(rng);
            let a = rng.random_range(-10.0..10.0);
            let shifted = with_values(&f, f.values.iter().map(|v| v + a).collect());
            let (mf, ms) = (eval(&f), eval(&shifted));
            if (ms - (mf + a)).abs() > AXIOM_TOL {
                Some(format!(
                    "translation invariance fails: M(f+{a:.6})={ms:.9} vs M(f)+a={:.9} for f={:?}",
                    mf + a,
                    f.values
                ))
            } else {
                None
            }
        }
        Axiom::PositiveHomogeneity => {
            let f = random_trajectory(rng);
            let tau = rng.random_range(-2.0..2.0f64).exp();
            let scaled = with_values(&f, f.values.iter().map(|v| v * tau).collect());
            let (mf, ms) = (eval(&f), eval(&scaled));
            if (ms - tau * mf).abs() > AXIOM_TOL * tau.max(1.0) {
                Some(format!(
                    "positive homogeneity fails: M({tau:.6}*f)={ms:.9} vs tau*M(f)={:.9} for f={:?}",
                    tau * mf,
                    f.values
                ))
            } else {
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn equal_weight_traj(values: Vec<f64>) -> Trajectory {
        let n = values.len();
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let normalized = vec![1.0 / n as f64; n];
        Trajectory {
            times,
            values,
            weights: QuadratureWeights {
                raw: normalized.clone(),
                normalized,
                rule: QuadRule::Trapezoid,
            },
        }
    }

    fn ramp_on_0_200() -> Trajectory {
        let times: Vec<f64> = (0..101).map(|k| 2.0 * k as f64).collect();
        let values = times.clone();
        Trajectory::uniform(times, values, QuadRule::Trapezoid).unwrap()
    }

    #[test]
    fn cdf_of_constant_at_its_value_is_one() {
        let traj = equal_weight_traj(vec![3.0; 5]);
        assert_relative_eq!(time_cdf(&traj, 3.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cdf_of_ramp_matches_analytic_fraction() {
        let traj = ramp_on_0_200();
        assert_relative_eq!(time_cdf(&traj, 99.0), 0.495, max_relative = 1e-12);
        assert_eq!(time_cdf(&traj, -1.0), 0.0);
    }

    #[test]
    fn cdf_is_nondecreasing_and_tops_out_at_one() {
        let traj = equal_weight_traj(vec![2.0, -1.0, 4.0, 0.5, 4.0]);
        let mut prev = -1.0;
        for t in [-2.0, -1.0, 0.0, 0.5, 2.0, 3.9, 4.0, 9.0] {
            let c = time_cdf(&traj, t);
            assert!(c >= prev);
            prev = c;
        }
        let top = traj.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((time_cdf(&traj, top) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quantile_examples() {
        let traj = equal_weight_traj(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(quantile(&traj, 0.5).unwrap(), 2.0);
        assert_eq!(quantile(&traj, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&traj, 1.0).unwrap(), 4.0);
        assert!(matches!(
            quantile(&traj, 1.5),
            Err(AnalysisError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn cvar_examples() {
        let traj = equal_weight_traj(vec![1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(cvar_eval(&traj, 0.5).unwrap(), 3.5, max_relative = 1e-12);
        let constant = equal_weight_traj(vec![2.5; 6]);
        for alpha in [0.0, 0.3, 0.9, 0.999] {
            assert_relative_eq!(
                cvar_eval(&constant, alpha).unwrap(),
                2.5,
                max_relative = 1e-9
            );
        }
        let traj = equal_weight_traj(vec![0.4, -2.0, 5.5, 1.0, 0.0]);
        let max = 5.5;
        assert!((cvar_eval(&traj, 1.0 - 1e-9).unwrap() - max).abs() <= 1e-5);
    }

    #[test]
    fn cvar_is_nondecreasing_in_alpha_and_dominates_quantile() {
        let traj = equal_weight_traj(vec![0.3, -1.0, 2.0, 0.7, 1.4, -0.2]);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..20 {
            let alpha = k as f64 / 20.0;
            let c = cvar_eval(&traj, alpha).unwrap();
            assert!(c >= prev - 1e-12);
            assert!(quantile(&traj, alpha).unwrap() <= c + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn cvar_matches_eta_minimization_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let traj = random_trajectory(&mut rng);
            let alpha = rng.random_range(0.0..0.95);
            let fast = cvar_eval(&traj, alpha).unwrap();
            // Dense grid search over eta with local refinement.
            let lo = traj.values.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = traj.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let ru = |eta: f64| -> f64 {
                eta + traj
                    .values
                    .iter()
                    .zip(&traj.weights.normalized)
                    .map(|(v, w)| w * (v - eta).max(0.0))
                    .sum::<f64>()
                    / (1.0 - alpha)
            };
            let mut best = f64::INFINITY;
            // The minimizer is a value point; scan values plus a fine grid.
            for v in &traj.values {
                best = best.min(ru(*v));
            }
            for k in 0..=4000 {
                let eta = lo + (hi - lo) * k as f64 / 4000.0;
                best = best.min(ru(eta));
            }
            assert!(
                (fast - best).abs() <= 1e-8,
                "alpha={alpha}: {fast} vs {best}"
            );
        }
    }

    #[test]
    fn excursions_hand_example() {
        let traj = Trajectory::uniform(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0, 3.0, 1.0, 4.0],
            QuadRule::Trapezoid,
        )
        .unwrap();
        let rep = excursions(&traj, 2.0);
        assert_eq!(rep.positive_intervals.len(), 2);
        let (s0, e0) = rep.positive_intervals[0];
        let (s1, e1) = rep.positive_intervals[1];
        assert_relative_eq!(s0, 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(e0, 1.5, max_relative = 1e-12);
        assert_relative_eq!(s1, 7.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(e1, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn excursions_degenerate_thresholds() {
        let traj = equal_weight_traj(vec![5.0; 4]);
        let above = excursions(&traj, 6.0);
        assert!(above.positive_intervals.is_empty());
        assert_eq!(above.negative_intervals, vec![(0.0, 3.0)]);
        assert_eq!(above.positive_fraction, 0.0);
        let below = excursions(&traj, 4.0);
        assert_eq!(below.positive_intervals, vec![(0.0, 3.0)]);
        assert_eq!(below.positive_fraction, 1.0);
    }

    #[test]
    fn excursion_fraction_complements_cdf_away_from_atoms() {
        let times: Vec<f64> = (0..201).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (0.11 * t).sin()).collect();
        let traj = Trajectory::uniform(times, values, QuadRule::Trapezoid).unwrap();
        let f = 0.33;
        let rep = excursions(&traj, f);
        let cdf = time_cdf(&traj, f);
        // Linear-interpolated crossing mass differs from the indicator sum by
        // at most a few support cells.
        assert!((rep.positive_fraction + cdf - 1.0).abs() <= 0.02);
    }

    #[test]
    fn dominance_examples() {
        let times: Vec<f64> = (0..101).map(|k| 2.0 * k as f64).collect();
        let f1 = Trajectory::uniform(times.clone(), times.clone(), QuadRule::Trapezoid).unwrap();
        let f2 = Trajectory::uniform(
            times.clone(),
            times.iter().map(|t| t / 2.0).collect(),
            QuadRule::Trapezoid,
        )
        .unwrap();
        assert!(dominates(&f1, &f2).unwrap());
        assert!(!dominates(&f2, &f1).unwrap());
        assert!(dominates(&f1, &f1).unwrap());

        let a = equal_weight_traj(vec![0.0, 10.0]);
        let b = equal_weight_traj(vec![5.0, 5.0]);
        assert!(!dominates(&a, &b).unwrap());
        assert!(!dominates(&b, &a).unwrap());
    }

    #[test]
    fn dominance_requires_identical_grids() {
        let a = equal_weight_traj(vec![0.0, 1.0]);
        let b = equal_weight_traj(vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            dominates(&a, &b),
            Err(AnalysisError::GridMismatch)
        ));
    }

    #[test]
    fn measure_eval_examples() {
        let c = equal_weight_traj(vec![4.0; 6]);
        let expectation = MeasureKind::Expectation(Pdf::uniform());
        assert_relative_eq!(
            measure_eval(&c, &expectation).unwrap(),
            4.0,
            max_relative = 1e-12
        );
        let traj = equal_weight_traj(vec![0.0, 2.0]);
        let mv = MeasureKind::MeanVariance {
            pdf: Pdf::uniform(),
            lambda: 8.0,
        };
        assert_relative_eq!(measure_eval(&traj, &mv).unwrap(), 9.0, max_relative = 1e-12);
    }

    #[test]
    fn exact_disutility_matches_cvar_to_1e8() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let traj = random_trajectory(&mut rng);
            for alpha in [0.1, 0.5, 0.9] {
                let via_tail = cvar_eval(&traj, alpha).unwrap();
                let via_inf = measure_eval(
                    &traj,
                    &MeasureKind::Disutility {
                        pdf: Pdf::uniform(),
                        g: DisutilityG::CvarExact { alpha },
                        translation_invariant: true,
                    },
                )
                .unwrap();
                assert!(
                    (via_tail - via_inf).abs() <= 1e-8,
                    "alpha={alpha}: {via_tail} vs {via_inf}"
                );
            }
        }
    }

    #[test]
    fn monotonicity_link_under_dominance() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let f2 = random_trajectory(&mut rng);
            let f1 = with_values(
                &f2,
                f2.values
                    .iter()
                    .map(|v| v + rng.random_range(0.0..3.0))
                    .collect(),
            );
            assert!(dominates(&f1, &f2).unwrap());
            for kind in [
                MeasureKind::Expectation(Pdf::uniform()),
                MeasureKind::Quantile {
                    pdf: Pdf::uniform(),
                    alpha: 0.6,
                },
                MeasureKind::CVaR {
                    pdf: Pdf::uniform(),
                    alpha: 0.8,
                },
            ] {
                let m1 = measure_eval(&f1, &kind).unwrap();
                let m2 = measure_eval(&f2, &kind).unwrap();
                assert!(m1 >= m2 - 1e-10);
            }
        }
    }

    #[test]
    fn property_suite_reproduces_the_coherence_table() {
        let report = property_suite(default_property_measures, 1000, 2024);
        for fam in &report.families {
            for out in &fam.outcomes {
                assert_eq!(
                    out.holds,
                    expected_to_hold(fam.family, out.axiom),
                    "{} / {}: counterexample {:?}",
                    fam.family.label(),
                    out.axiom.label(),
                    out.counterexample
                );
            }
        }
        assert!(report.matches_expected());
    }

    #[test]
    fn mean_variance_homogeneity_hand_counterexample() {
        // values [0,2], tau=2, lambda=1: M(f)=2, M(2f)=6 != 4.
        let traj = equal_weight_traj(vec![0.0, 2.0]);
        let scaled = equal_weight_traj(vec![0.0, 4.0]);
        let mv = MeasureKind::MeanVariance {
            pdf: Pdf::uniform(),
            lambda: 1.0,
        };
        let mf = measure_eval(&traj, &mv).unwrap();
        let ms = measure_eval(&scaled, &mv).unwrap();
        assert_relative_eq!(mf, 2.0, max_relative = 1e-12);
        assert_relative_eq!(ms, 6.0, max_relative = 1e-12);
        assert!((ms - 2.0 * mf).abs() > 1.0);
    }

    #[test]
    fn property_suite_is_seed_deterministic() {
        let a = property_suite(default_property_measures, 50, 7);
        let b = property_suite(default_property_measures, 50, 7);
        for (fa, fb) in a.families.iter().zip(&b.families) {
            for (oa, ob) in fa.outcomes.iter().zip(&fb.outcomes) {
                assert_eq!(oa.holds, ob.holds);
                assert_eq!(oa.counterexample, ob.counterexample);
            }
        }
    }
}
