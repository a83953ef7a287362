//! Generalization-bound calculators and empirical checks of the perturbation
//! bound.
//!
//! The covering-number constant
//!
//! ```text
//! Δ = 30·w^{5.5}·h²·(L_layer^h + 1)·(L_Γ + 1)·T²·e^{2T(L_Γ+1)}·B_K·(B³ + 1) / B_Π
//! ```
//!
//! overflows `f64` for realistic `T`, so it is evaluated as `ln Δ` and the
//! estimation terms only ever need `ln(3 + 6BΔ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillator::OscillatorModel;
use crate::trajectory::Trajectory;

/// Class-level constants shared by both theorem calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Widest layer of Γ and Π, inputs and outputs included.
    pub w_max: u64,
    /// Bound on every weight and bias magnitude.
    #[serde(alias = "B_max")]
    pub b_max: f64,
    pub h_pi: u32,
    #[serde(alias = "T")]
    pub t: f64,
    #[serde(alias = "N")]
    pub n: u64,
    pub delta: f64,
    /// Input bound `B_K`.
    #[serde(alias = "B_K")]
    pub b_k: f64,
    /// Output bound `B_Π`.
    #[serde(alias = "B_pi")]
    pub b_pi: f64,
    #[serde(alias = "B_loss")]
    pub b_loss: f64,
    pub q: u32,
    pub p: u32,
    pub r: u32,
    /// `L_Γ`; defaults to `w_max²·B_max²`.
    #[serde(default, alias = "L_gamma")]
    pub l_gamma: Option<f64>,
    /// Inter-layer constant of Π, raised to `h_pi` inside the formulas;
    /// defaults to `w_max·B_max`.
    #[serde(default, alias = "L_pi_layer")]
    pub l_pi_layer: Option<f64>,
}

impl BoundInputs {
    /// `B_loss = B_Π + B_Φ(K)`.
    pub fn loss_bound_from_parts(b_pi: f64, b_phi_k: f64) -> f64 {
        b_pi + b_phi_k
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("w_max", self.w_max as f64),
            ("h_pi", self.h_pi as f64),
            ("T", self.t),
            ("N", self.n as f64),
            ("B_K", self.b_k),
            ("B_pi", self.b_pi),
            ("B_loss", self.b_loss),
            ("q", self.q as f64),
            ("p", self.p as f64),
            ("r", self.r as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.b_max >= 0.0 && self.b_max.is_finite()) {
            return Err(Error::invalid(format!("B_max must be ≥ 0, got {}", self.b_max)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("δ must lie in (0, 1), got {}", self.delta)));
        }
        for (name, v) in [("L_gamma", self.l_gamma), ("L_pi_layer", self.l_pi_layer)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be ≥ 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// `ln L_Γ` (may be `-∞`).
    fn ln_l_gamma(&self) -> f64 {
        match self.l_gamma {
            Some(l) => l.ln(),
            None => 2.0 * ((self.w_max as f64).ln() + self.b_max.ln()),
        }
    }

    /// `ln(L_layer^h)` for depth `h`.
    fn ln_l_layer_pow(&self, h: u32) -> f64 {
        let ln_layer = match self.l_pi_layer {
            Some(l) => l.ln(),
            None => (self.w_max as f64).ln() + self.b_max.ln(),
        };
        h as f64 * ln_layer
    }
}

/// Constants of the second theorem. None of them is computed here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Constants {
    #[serde(alias = "L_h")]
    pub l_h: f64,
    #[serde(alias = "B_beta_g")]
    pub b_beta_g: f64,
    #[serde(alias = "C_gamma")]
    pub c_gamma: f64,
    #[serde(alias = "C_pi")]
    pub c_pi: f64,
    pub w_gamma: u64,
    pub w_pi: u64,
}

/// `ln Δ` with the overflow-aware direct value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogValue {
    pub ln: f64,
    /// `exp(ln)`, `+∞` when it overflows.
    pub value: f64,
    pub overflow: bool,
}

impl LogValue {
    fn from_ln(ln: f64) -> Self {
        let value = ln.exp();
        Self {
            ln,
            value,
            overflow: value.is_infinite(),
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(eᵃ + eᵇ)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + ln_1p_exp(lo - hi)
}

fn ln_delta_with(inputs: &BoundInputs, h: u32, ln_layer_pow: f64) -> f64 {
    let w = inputs.w_max as f64;
    let ln_lg = inputs.ln_l_gamma();
    let lg_plus_1 = inputs.l_gamma.unwrap_or_else(|| (w * inputs.b_max).powi(2)) + 1.0;
    let t = inputs.t;
    30f64.ln()
        + 5.5 * w.ln()
        + 2.0 * (h as f64).ln()
        + ln_1p_exp(ln_layer_pow)
        + ln_1p_exp(ln_lg)
        + 2.0 * t.ln()
        + 2.0 * t * lg_plus_1
        - inputs.b_pi.ln()
        + inputs.b_k.ln()
        + ln_1p_exp(3.0 * inputs.b_max.ln())
}

/// The covering constant `Δ` for depth `h_pi`.
pub fn delta_pi_phi(inputs: &BoundInputs) -> Result<LogValue> {
    inputs.validate()?;
    Ok(LogValue::from_ln(ln_delta_with(inputs, inputs.h_pi, inputs.ln_l_layer_pow(inputs.h_pi))))
}

/// `ln(3 + 6·B·Δ)` from `ln Δ`.
pub fn ln_covering_arg(b_max: f64, ln_delta: f64) -> f64 {
    log_add_exp(3f64.ln(), 6f64.ln() + b_max.ln() + ln_delta)
}

/// `√(0.5·ln(2/δ))`, defined for `δ ∈ (0, 1]`.
pub fn confidence_term(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("δ must lie in (0, 1], got {delta}")));
    }
    Ok((0.5 * (2.0 / delta).ln()).sqrt())
}

/// `3·T·q·B_loss²/√N · [c·√ln(3 + 6BΔ) + √(0.5·ln(2/δ))]`.
fn estimation(inputs: &BoundInputs, complexity_coef: f64, ln_delta: f64) -> Result<f64> {
    let prefactor = 3.0 * inputs.t * inputs.q as f64 * inputs.b_loss.powi(2) / (inputs.n as f64).sqrt();
    let complexity = complexity_coef * ln_covering_arg(inputs.b_max, ln_delta).sqrt();
    Ok(prefactor * (complexity + confidence_term(inputs.delta)?))
}

pub fn estimation_error_thm1(inputs: &BoundInputs) -> Result<f64> {
    let ln_delta = delta_pi_phi(inputs)?.ln;
    let coef = 86.0 * (inputs.w_max as f64).powf(1.5) * inputs.h_pi as f64;
    estimation(inputs, coef, ln_delta)
}

/// `T·ε_y² + estimation`.
pub fn generalization_bound_thm1(inputs: &BoundInputs, eps_y: f64) -> Result<f64> {
    if !(eps_y >= 0.0 && eps_y.is_finite()) {
        return Err(Error::invalid(format!("ε_y must be ≥ 0, got {eps_y}")));
    }
    Ok(inputs.t * eps_y * eps_y + estimation_error_thm1(inputs)?)
}

/// `ln Δ` with `h_pi = 2` and `L_layer² = w²B²` unless supplied.
pub fn delta_pi_phi_thm2(inputs: &BoundInputs) -> Result<LogValue> {
    inputs.validate()?;
    Ok(LogValue::from_ln(ln_delta_with(inputs, 2, inputs.ln_l_layer_pow(2))))
}

pub fn estimation_error_thm2(inputs: &BoundInputs) -> Result<f64> {
    let ln_delta = delta_pi_phi_thm2(inputs)?.ln;
    let coef = 172.0 * (inputs.w_max as f64).powf(1.5);
    estimation(inputs, coef, ln_delta)
}

/// `16T·(L_h²·B_β²·r²·C_Γ/(w_Γ − 8r) + q³·C_Π/(w_Π − 8q))`.
pub fn approximation_term_thm2(inputs: &BoundInputs, c: &Thm2Constants) -> Result<f64> {
    let r = inputs.r as f64;
    let q = inputs.q as f64;
    let den_g = c.w_gamma as f64 - 8.0 * r;
    let den_p = c.w_pi as f64 - 8.0 * q;
    if den_g <= 0.0 {
        return Err(Error::invalid(format!("w_Γ = {} must exceed 8r = {}", c.w_gamma, 8.0 * r)));
    }
    if den_p <= 0.0 {
        return Err(Error::invalid(format!("w_Π = {} must exceed 8q = {}", c.w_pi, 8.0 * q)));
    }
    for (name, v) in [("L_h", c.l_h), ("B_beta_g", c.b_beta_g), ("C_gamma", c.c_gamma), ("C_pi", c.c_pi)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be ≥ 0, got {v}")));
        }
    }
    let g = c.l_h.powi(2) * c.b_beta_g.powi(2) * r * r * c.c_gamma / den_g;
    let p = q.powi(3) * c.c_pi / den_p;
    Ok(16.0 * inputs.t * (g + p))
}

pub fn generalization_bound_thm2(inputs: &BoundInputs, consts: &Thm2Constants) -> Result<f64> {
    Ok(approximation_term_thm2(inputs, consts)? + estimation_error_thm2(inputs)?)
}

/// `[max(B_W, B_b) + 1]·[B_b·(B_W + 1) + 2] + B_b̃ + 2`. The Π weight bound
/// is part of the signature but does not enter the expression.
pub fn b_factor(_b_w_pi: f64, b_b_pi: f64, b_w: f64, b_b: f64) -> f64 {
    (b_w.max(b_b) + 1.0) * (b_b * (b_w + 1.0) + 2.0) + b_b_pi + 2.0
}

/// Realized constants entering the perturbation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationTerms {
    pub varsigma: f64,
    pub horizon: f64,
    pub l_pi_layer_pow: f64,
    pub l_gamma: f64,
    pub w_pi: f64,
    pub w_gamma_out: f64,
    pub w_gamma: f64,
    pub h_pi: f64,
    pub p: f64,
    pub b_k: f64,
    pub b_factor: f64,
}

impl PerturbationTerms {
    /// `3ς·(L_layer^h + 1)·w_Π·w_Γout²·w_Γ²·h²·p·T²·e^{2T(L_Γ+1)}·(L_Γ + 1)·B_K·B`.
    pub fn value(&self) -> f64 {
        if self.varsigma == 0.0 {
            return 0.0;
        }
        let t = self.horizon;
        3.0 * self.varsigma
            * (self.l_pi_layer_pow + 1.0)
            * self.w_pi
            * self.w_gamma_out.powi(2)
            * self.w_gamma.powi(2)
            * self.h_pi.powi(2)
            * self.p
            * t
            * t
            * (2.0 * t * (self.l_gamma + 1.0)).exp()
            * (self.l_gamma + 1.0)
            * self.b_k
            * self.b_factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub varsigma: f64,
    pub max_observed: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub terms: PerturbationTerms,
}

/// Realized constants for a model pair. Norm bounds are the larger of the
/// two models'; the horizon is clamped below at 1.
pub fn perturbation_terms(
    a: &OscillatorModel<f64>,
    b: &OscillatorModel<f64>,
    horizon: f64,
    b_k: f64,
) -> Result<PerturbationTerms> {
    if a.dims() != b.dims() || a.gamma.layout() != b.gamma.layout() || a.pi.layout() != b.pi.layout() {
        return Err(Error::invalid("perturbation check needs two models with the same layout"));
    }
    let varsigma = a
        .gamma
        .max_param_difference(&b.gamma)?
        .max(a.pi.max_param_difference(&b.pi)?);
    let la = a.gamma.lipschitz();
    let lb = b.gamma.lipschitz();
    let pa = a.pi.lipschitz();
    let pb = b.pi.lipschitz();
    let h = a.pi.depth() as i32;
    let b_w = a.gamma.max_abs_weight().max(b.gamma.max_abs_weight());
    let b_b = a.gamma.max_abs_bias().max(b.gamma.max_abs_bias());
    let b_w_pi = a.pi.max_abs_weight().max(b.pi.max_abs_weight());
    let b_b_pi = a.pi.max_abs_bias().max(b.pi.max_abs_bias());
    Ok(PerturbationTerms {
        varsigma,
        horizon: horizon.max(1.0),
        l_pi_layer_pow: pa.per_layer.max(pb.per_layer).powi(h),
        l_gamma: la.network.max(lb.network),
        w_pi: a.pi.max_hidden_width().max(1) as f64,
        w_gamma_out: a.gamma.output_dim() as f64,
        w_gamma: a.gamma.max_hidden_width().max(1) as f64,
        h_pi: h as f64,
        p: a.dims().p as f64,
        b_k,
        b_factor: b_factor(b_w_pi, b_b_pi, b_w, b_b),
    })
}

/// Rolls both models out on every input and compares the largest
/// `max_t |y_a(t) − y_b(t)|₁` with the perturbation bound.
pub fn verify_perturbation_bound(
    a: &OscillatorModel<f64>,
    b: &OscillatorModel<f64>,
    u_set: &[Trajectory<f64>],
    b_k: f64,
) -> Result<PerturbationReport> {
    let first = u_set.first().ok_or_else(|| Error::invalid("empty input set"))?;
    let horizon = first.span();
    let terms = perturbation_terms(a, b, horizon, b_k)?;
    for (l, u) in u_set.iter().enumerate() {
        if u.span() > horizon * (1.0 + 1e-12) || u.span() < horizon * (1.0 - 1e-12) {
            return Err(Error::invalid(format!("input {l} has a different horizon")));
        }
        if u.values().iter().any(|v| v.abs() > b_k) {
            return Err(Error::invalid(format!("input {l} exceeds the input bound {b_k}")));
        }
    }
    let diffs: Vec<f64> = u_set
        .par_iter()
        .map(|u| -> Result<f64> {
            let ya = a.predict(u)?;
            let yb = b.predict(u)?;
            let steps = ya.steps();
            let mut worst = 0.0f64;
            for i in 0..steps {
                let mut s = 0.0;
                for c in 0..ya.channels() {
                    s += (ya.get(c, i) - yb.get(c, i)).abs();
                }
                worst = worst.max(s);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let max_observed = diffs.into_iter().fold(0.0, f64::max);
    let bound = terms.value();
    Ok(PerturbationReport {
        varsigma: terms.varsigma,
        max_observed,
        bound,
        satisfied: max_observed <= bound,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoundInputs {
        BoundInputs {
            w_max: 1,
            b_max: 1.0,
            h_pi: 1,
            t: 1.0,
            n: 100,
            delta: 0.05,
            b_k: 1.0,
            b_pi: 1.0,
            b_loss: 2.0,
            q: 1,
            p: 1,
            r: 1,
            l_gamma: Some(0.0),
            l_pi_layer: Some(1.0),
        }
    }

    fn reference() -> BoundInputs {
        BoundInputs {
            w_max: 40,
            h_pi: 2,
            t: 10.0,
            n: 1600,
            l_gamma: None,
            l_pi_layer: None,
            ..unit()
        }
    }

    #[test]
    fn delta_unit_case() {
        let d = delta_pi_phi(&unit()).unwrap();
        let expect = 120.0 * 1f64.exp().powi(2);
        assert!((d.value - expect).abs() / expect < 1e-14);
        assert!((d.value - 886.6).abs() < 0.1);
        assert!(!d.overflow);
    }

    #[test]
    fn delta_overflow_is_flagged() {
        let big = BoundInputs {
            w_max: 10_000,
            t: 1000.0,
            ..reference()
        };
        let d = delta_pi_phi(&big).unwrap();
        assert!(d.overflow && d.ln.is_finite());
        assert!(estimation_error_thm1(&big).unwrap().is_finite());
    }

    #[test]
    fn estimation_n_scaling_and_confidence() {
        let a = estimation_error_thm1(&reference()).unwrap();
        let b = estimation_error_thm1(&BoundInputs { n: 6400, ..reference() }).unwrap();
        assert!((a / b - 2.0).abs() < 1e-14);
        assert!((confidence_term(1.0).unwrap() - 0.5887).abs() < 1e-4);
        assert!(confidence_term(0.0).is_err());
    }

    #[test]
    fn thm1_additivity() {
        let i = reference();
        let b0 = generalization_bound_thm1(&i, 0.0).unwrap();
        let b1 = generalization_bound_thm1(&i, 0.3).unwrap();
        assert_eq!(b0, estimation_error_thm1(&i).unwrap());
        assert!(((b1 - b0) - 10.0 * 0.09).abs() < 1e-9 * b1);
    }

    #[test]
    fn thm2_approximation_term() {
        let i = BoundInputs { r: 2, q: 1, ..reference() };
        let zero = Thm2Constants {
            l_h: 1.0,
            b_beta_g: 1.0,
            c_gamma: 0.0,
            c_pi: 0.0,
            w_gamma: 20,
            w_pi: 12,
        };
        assert_eq!(approximation_term_thm2(&i, &zero).unwrap(), 0.0);
        let mut c = Thm2Constants { c_gamma: 1.0, c_pi: 1.0, ..zero };
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let v = approximation_term_thm2(&i, &c).unwrap();
            assert!(v < prev);
            prev = v;
            c.w_gamma *= 2;
            c.w_pi *= 2;
        }
        assert!(approximation_term_thm2(&i, &Thm2Constants { w_gamma: 16, ..zero }).is_err());
        assert!(approximation_term_thm2(&i, &Thm2Constants { w_pi: 8, ..zero }).is_err());
    }

    #[test]
    fn b_factor_unit() {
        assert_eq!(b_factor(1.0, 1.0, 1.0, 1.0), 11.0);
    }

    #[test]
    fn validation() {
        assert!(delta_pi_phi(&BoundInputs { delta: 1.0, ..unit() }).is_err());
        assert!(delta_pi_phi(&BoundInputs { t: 0.0, ..unit() }).is_err());
        assert!(delta_pi_phi(&BoundInputs { l_gamma: Some(-1.0), ..unit() }).is_err());
    }
}
