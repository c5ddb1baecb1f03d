//! Update size of Adam and Adam-Rel after a step change in gradient scale.
//!
//! The model: a scalar gradient equal to `g` for `t_prime` steps, then `k * g`
//! forever after. Time `t = 0` is the first step at the new scale. With
//! `eps = 0` the update size `m_hat / sqrt(v_hat)` is independent of `g`, and
//! as `t_prime` grows it converges to
//!
//! ```text
//! adam(k, t)     = (b1^(t+1) + k (1 - b1^(t+1))) / sqrt(b2^(t+1) + k^2 (1 - b2^(t+1)))
//! adam_rel(k, t) = sqrt(1 - b2^(t+1)) / (1 - b1^(t+1)) * adam(k, t)
//! ```
//!
//! where Adam-Rel resets its timestep immediately before the first `k * g`
//! step. [`simulate_step_gradient`] runs the actual optimizer on the same
//! gradient stream so the closed forms can be checked against it.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerState, Variant};

/// History length used as a stand-in for `t_prime -> infinity`.
pub const DEFAULT_T_PRIME: u64 = 5000;

/// Variants with a closed-form limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveVariant {
    Adam,
    AdamRel,
}

impl CurveVariant {
    pub fn name(self) -> &'static str {
        match self {
            CurveVariant::Adam => "adam",
            CurveVariant::AdamRel => "adam-rel",
        }
    }
}

impl fmt::Display for CurveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(CurveVariant::Adam),
            "adam-rel" => Ok(CurveVariant::AdamRel),
            _ => Err(Error::invalid(format!(
                "unknown curve variant `{s}` (expected adam or adam-rel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGradientScenario {
    /// Gradient before the change.
    pub g: f64,
    /// Multiplier applied from `t = 0` on.
    pub k: f64,
    /// Number of steps at gradient `g` before the change.
    pub t_prime: u64,
    /// Last post-change step to report.
    pub t_max: u64,
    pub beta1: f64,
    pub beta2: f64,
}

impl StepGradientScenario {
    pub fn new(g: f64, k: f64, t_prime: u64, t_max: u64) -> Self {
        Self {
            g,
            k,
            t_prime,
            t_max,
            beta1: crate::optim::DEFAULT_BETA1,
            beta2: crate::optim::DEFAULT_BETA2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::invalid(format!(
                "g must be positive, got {}",
                self.g
            )));
        }
        check_k(self.k)?;
        if self.t_prime == 0 {
            return Err(Error::invalid("t_prime must be at least 1"));
        }
        check_betas(self.beta1, self.beta2)
    }
}

/// Update size against post-change time for one `(variant, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateCurve {
    pub variant: CurveVariant,
    pub k: f64,
    /// `(t, update_size)` with strictly increasing `t`.
    pub points: Vec<(u64, f64)>,
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "k must be positive and finite, got {k}"
        )))
    }
}

fn check_betas(beta1: f64, beta2: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "betas must lie in [0, 1), got {beta1} and {beta2}"
        )))
    }
}

fn pow(beta: f64, e: u64) -> f64 {
    match i32::try_from(e) {
        Ok(e) => beta.powi(e),
        Err(_) => beta.powf(e as f64),
    }
}

/// Limit of Adam's update size `t` steps after the gradient is multiplied by `k`.
pub fn adam_limit_update(k: f64, t: u64, beta1: f64, beta2: f64) -> Result<f64> {
    check_k(k)?;
    check_betas(beta1, beta2)?;
    Ok(adam_limit_unchecked(
        k,
        pow(beta1, t + 1),
        pow(beta2, t + 1),
    ))
}

/// Same as [`adam_limit_update`] for an optimizer whose timestep was reset
/// just before the change.
pub fn adamrel_limit_update(k: f64, t: u64, beta1: f64, beta2: f64) -> Result<f64> {
    check_k(k)?;
    check_betas(beta1, beta2)?;
    let (p1, p2) = (pow(beta1, t + 1), pow(beta2, t + 1));
    Ok(reset_prefactor(p1, p2) * adam_limit_unchecked(k, p1, p2))
}

/// `p1 = beta1^(t+1)`, `p2 = beta2^(t+1)`.
pub(crate) fn adam_limit_unchecked(k: f64, p1: f64, p2: f64) -> f64 {
    (p1 + k * (1.0 - p1)) / (p2 + k * k * (1.0 - p2)).sqrt()
}

pub(crate) fn reset_prefactor(p1: f64, p2: f64) -> f64 {
    (1.0 - p2).sqrt() / (1.0 - p1)
}

/// Largest value `adam_limit_update(k, 0)` can take over all `k > 0`.
pub fn adam_peak_bound(beta1: f64, beta2: f64) -> f64 {
    (beta1 * beta1 / beta2 + (1.0 - beta1).powi(2) / (1.0 - beta2)).sqrt()
}

/// Closed-form `t`-dependence for the update size with a finite history of
/// `t_prime` steps (no limit taken). Written from the geometric-series sums
/// for `m_t` and `v_t`, not from the recurrence.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn finite_history_update(
    k: f64,
    t: u64,
    t_prime: u64,
    beta1: f64,
    beta2: f64,
    reset: bool,
) -> f64 {
    let (p1, p2) = (pow(beta1, t + 1), pow(beta2, t + 1));
    let (h1, h2) = (pow(beta1, t_prime), pow(beta2, t_prime));
    let m = p1 * (1.0 - h1) + k * (1.0 - p1);
    let v = p2 * (1.0 - h2) + k * k * (1.0 - p2);
    let correction = if reset {
        reset_prefactor(p1, p2)
    } else {
        let e = t_prime + t + 1;
        (1.0 - pow(beta2, e)).sqrt() / (1.0 - pow(beta1, e))
    };
    correction * m / v.sqrt()
}

/// Optimizer variants the simulator can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimVariant {
    Adam,
    AdamRel,
    AdamMr,
}

impl SimVariant {
    fn optimizer_variant(self) -> Variant {
        match self {
            SimVariant::Adam => Variant::Adam,
            SimVariant::AdamRel => Variant::AdamRel,
            SimVariant::AdamMr => Variant::AdamMr,
        }
    }
}

/// Result of running the optimizer through a [`StepGradientScenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCurve {
    pub variant: SimVariant,
    pub k: f64,
    pub points: Vec<(u64, f64)>,
}

/// Runs the real optimizer (`alpha = 1`, `eps = 0`) on the scalar gradient
/// stream of `scenario` and reports `|u_t|` for `t = 0..=t_max`.
pub fn simulate_step_gradient(
    scenario: &StepGradientScenario,
    variant: SimVariant,
) -> Result<SimulatedCurve> {
    scenario.validate()?;
    let config = OptimizerConfig::new(
        variant.optimizer_variant(),
        1.0,
        scenario.beta1,
        scenario.beta2,
        0.0,
        None,
    )?;
    let mut state = OptimizerState::new(1)?;
    let mut param = [0.0];
    let before = [scenario.g];
    for _ in 0..scenario.t_prime {
        state.step(&config, &mut param, &before)?;
    }
    state.notify_boundary(&config);
    let after = [scenario.k * scenario.g];
    let mut points = Vec::with_capacity(scenario.t_max as usize + 1);
    for t in 0..=scenario.t_max {
        let r = state.step(&config, &mut param, &after)?;
        points.push((t, r.update[0].abs()));
    }
    Ok(SimulatedCurve {
        variant,
        k: scenario.k,
        points,
    })
}

/// Closed-form curves for every `(variant, k)` pair, variants outermost.
pub fn emit_update_curves(
    k_values: &[f64],
    t_max: u64,
    beta1: f64,
    beta2: f64,
    variants: &[CurveVariant],
) -> Result<Vec<UpdateCurve>> {
    if k_values.is_empty() {
        return Err(Error::invalid("k_values must not be empty"));
    }
    if variants.is_empty() {
        return Err(Error::invalid("variants must not be empty"));
    }
    check_betas(beta1, beta2)?;
    for &k in k_values {
        check_k(k)?;
    }
    let mut curves = Vec::with_capacity(k_values.len() * variants.len());
    for &variant in variants {
        for &k in k_values {
            curves.push(closed_form_curve(variant, k, t_max, beta1, beta2)?);
        }
    }
    Ok(curves)
}

pub fn closed_form_curve(
    variant: CurveVariant,
    k: f64,
    t_max: u64,
    beta1: f64,
    beta2: f64,
) -> Result<UpdateCurve> {
    check_k(k)?;
    check_betas(beta1, beta2)?;
    let (mut p1, mut p2) = (beta1, beta2);
    let mut points = Vec::with_capacity(t_max as usize + 1);
    for t in 0..=t_max {
        // Running products drift from powi by a few ulps over long horizons;
        // recompute exactly every so often.
        if t % 256 == 0 {
            p1 = pow(beta1, t + 1);
            p2 = pow(beta2, t + 1);
        }
        let adam = adam_limit_unchecked(k, p1, p2);
        let value = match variant {
            CurveVariant::Adam => adam,
            CurveVariant::AdamRel => reset_prefactor(p1, p2) * adam,
        };
        points.push((t, value));
        p1 *= beta1;
        p2 *= beta2;
    }
    Ok(UpdateCurve { variant, k, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn recurrence(k: f64, t_prime: u64, t_max: u64, variant: SimVariant) -> Vec<f64> {
        let s = StepGradientScenario::new(0.37, k, t_prime, t_max);
        simulate_step_gradient(&s, variant)
            .unwrap()
            .points
            .into_iter()
            .map(|p| p.1)
            .collect()
    }

    #[test]
    fn unit_multiplier_gives_unit_update() {
        for t in [0, 1, 7, 100, 5000] {
            assert_eq!(adam_limit_update(1.0, t, B1, B2).unwrap(), 1.0);
        }
    }

    #[test]
    fn large_k_peak_is_sqrt_ten() {
        let u = adam_limit_update(1e9, 0, B1, B2).unwrap();
        assert!((u - 3.16228).abs() < 1e-3, "{u}");
    }

    #[test]
    fn frozen_values() {
        // 1.1 / sqrt(1.003) and 12 / sqrt(13.32), evaluated by hand.
        let u = adam_limit_update(2.0, 0, B1, B2).unwrap();
        assert!((u - 1.1 / 1.003f64.sqrt()).abs() < 1e-14);
        assert!((u - 1.09835).abs() < 1e-5);
        let u = adam_limit_update(111.0, 0, B1, B2).unwrap();
        assert!((u - 3.2880).abs() < 1e-4, "{u}");
        assert!(u > 10f64.sqrt());
        let r = adamrel_limit_update(1.0, 0, B1, B2).unwrap();
        assert!((r - 0.316228).abs() < 1e-6);
        // sqrt(0.001)/0.1 * 100.9/sqrt(1000.999)
        let r = adamrel_limit_update(1000.0, 0, B1, B2).unwrap();
        assert!((r - 1.0084963818).abs() < 1e-9, "{r}");
    }

    #[test]
    fn invalid_k_rejected() {
        for k in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(adam_limit_update(k, 0, B1, B2).is_err());
            assert!(adamrel_limit_update(k, 0, B1, B2).is_err());
        }
        assert!(adam_limit_update(1.0, 0, 1.0, B2).is_err());
    }

    #[test]
    fn finite_history_expression_matches_recurrence() {
        for &k in &[0.5, 1.0, 3.0, 50.0] {
            for &t_prime in &[1u64, 2, 10, 300] {
                let adam = recurrence(k, t_prime, 30, SimVariant::Adam);
                let rel = recurrence(k, t_prime, 30, SimVariant::AdamRel);
                for t in 0..=30u64 {
                    let a = finite_history_update(k, t, t_prime, B1, B2, false);
                    let r = finite_history_update(k, t, t_prime, B1, B2, true);
                    assert!(
                        (a - adam[t as usize]).abs() < 1e-10,
                        "k={k} t'={t_prime} t={t}"
                    );
                    assert!(
                        (r - rel[t as usize]).abs() < 1e-10,
                        "k={k} t'={t_prime} t={t}"
                    );
                }
            }
        }
    }

    #[test]
    fn finite_history_tends_to_limit() {
        for &k in &[2.0, 100.0] {
            let a = finite_history_update(k, 3, 200_000, B1, B2, false);
            assert!((a - adam_limit_update(k, 3, B1, B2).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn simulator_examples() {
        let flat = recurrence(1.0, 5000, 50, SimVariant::Adam);
        assert!(flat.iter().all(|u| (u - 1.0).abs() < 1e-9));
        let a = recurrence(100.0, 5000, 0, SimVariant::Adam)[0];
        assert!((a - finite_history_update(100.0, 0, 5000, B1, B2, false)).abs() < 1e-12);
        // 0.999^5000 is still 6.7e-3; the limit needs a much longer history.
        assert!((a - adam_limit_update(100.0, 0, B1, B2).unwrap()).abs() > 1e-3);
        let a = recurrence(100.0, 40_000, 0, SimVariant::Adam)[0];
        assert!((a - adam_limit_update(100.0, 0, B1, B2).unwrap()).abs() < 1e-9);
        for k in [0.1, 1.0, 7.0, 1e6] {
            let mr = recurrence(k, 50, 0, SimVariant::AdamMr)[0];
            assert!((mr - 1.0).abs() <= 4.0 * f64::EPSILON, "{mr}");
        }
    }

    #[test]
    fn curves_are_row_major_and_running_products_are_accurate() {
        let curves = emit_update_curves(
            &[1.0, 2.0, 10.0],
            20_000,
            B1,
            B2,
            &[CurveVariant::Adam, CurveVariant::AdamRel],
        )
        .unwrap();
        assert_eq!(curves.len(), 6);
        assert_eq!(curves[0].variant, CurveVariant::Adam);
        assert_eq!(curves[3].variant, CurveVariant::AdamRel);
        for c in &curves {
            assert_eq!(c.points.len(), 20_001);
            for &(t, u) in c.points.iter().step_by(997) {
                let direct = match c.variant {
                    CurveVariant::Adam => adam_limit_update(c.k, t, B1, B2),
                    CurveVariant::AdamRel => adamrel_limit_update(c.k, t, B1, B2),
                }
                .unwrap();
                assert!((u - direct).abs() <= 1e-13 * direct, "t={t}");
            }
        }
        assert!(emit_update_curves(&[], 3, B1, B2, &[CurveVariant::Adam]).is_err());
    }
}
