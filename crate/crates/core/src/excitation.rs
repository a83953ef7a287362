//! Nonstationary Gaussian ground acceleration with the time-frequency
//! spectrum `W(t, f) = A·t²·f²·exp(−c·(1 + f²)·t)`.
//!
//! Samples are synthesized by spectral representation, treating `W` as an
//! evolutionary one-sided power spectrum on `n` midpoint lines
//! `f_k = (k − ½)·Δf`, `Δf = f_max / n`:
//!
//! ```text
//! u(tᵢ) = Σ_k √(W(tᵢ, f_k)·Δf) · [A_k·cos(2π f_k tᵢ) + B_k·sin(2π f_k tᵢ)]
//! ```
//!
//! with `A_k, B_k` i.i.d. standard normals drawn from a [`CounterRng`] keyed
//! by the sample seed (pairs in line order, Box-Muller). The marginal variance
//! is then `Σ_k W(tᵢ, f_k)·Δf ≈ ∫₀^∞ W(tᵢ, f) df`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_seed, CounterRng};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// `f` in cycles per second; harmonics are `cos(2π f t)`.
    #[default]
    Hertz,
    /// `f` in rad/s; harmonics are `cos(f t)`.
    RadPerSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WvSpectrum {
    pub amplitude: f64,
    pub decay: f64,
    /// Truncation frequency, in `unit`.
    pub f_max: f64,
    pub n_freq: usize,
    #[serde(default)]
    pub unit: FrequencyUnit,
}

impl Default for WvSpectrum {
    fn default() -> Self {
        Self {
            amplitude: 2500.0,
            decay: 0.3,
            f_max: 10.0,
            n_freq: 200,
            unit: FrequencyUnit::Hertz,
        }
    }
}

impl WvSpectrum {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.decay > 0.0 && self.f_max > 0.0) {
            return Err(Error::invalid(format!(
                "spectrum amplitude, decay and f_max must be positive: {self:?}"
            )));
        }
        if self.n_freq == 0 {
            return Err(Error::invalid("spectrum needs at least one frequency line"));
        }
        Ok(())
    }

    /// `W(t, f)`.
    pub fn value(&self, t: f64, f: f64) -> f64 {
        self.amplitude * t * t * f * f * (-self.decay * (1.0 + f * f) * t).exp()
    }

    /// Marginal variance `∫₀^∞ W(t, f) df = A·t²·e^{−ct}·√π / (4·(ct)^{3/2})`.
    pub fn variance(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::invalid(format!("variance needs t > 0, got {t}")));
        }
        let ct = self.decay * t;
        Ok(self.amplitude * t * t * (-ct).exp() * std::f64::consts::PI.sqrt() / (4.0 * ct.powf(1.5)))
    }

    /// Highest frequency (in `unit`) representable on a grid with step `dt`.
    pub fn nyquist(&self, dt: f64) -> f64 {
        match self.unit {
            FrequencyUnit::Hertz => 0.5 / dt,
            FrequencyUnit::RadPerSecond => std::f64::consts::PI / dt,
        }
    }

    fn angular(&self, f: f64) -> f64 {
        match self.unit {
            FrequencyUnit::Hertz => std::f64::consts::TAU * f,
            FrequencyUnit::RadPerSecond => f,
        }
    }
}

/// Precomputed harmonic basis for one time grid; sampling is then a set of
/// dot products per grid point.
#[derive(Debug, Clone)]
pub struct ExcitationSampler {
    spec: WvSpectrum,
    dt: f64,
    steps: usize,
    /// `[steps × n_freq]`: `√(W(tᵢ, f_k)Δf)·cos(ω_k tᵢ)`.
    cos_basis: Vec<f64>,
    sin_basis: Vec<f64>,
}

impl ExcitationSampler {
    /// Grid `tᵢ = i·dt`, `i < steps`.
    pub fn new(spec: WvSpectrum, dt: f64, steps: usize) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::invalid(format!("invalid grid: dt = {dt}, steps = {steps}")));
        }
        let nyquist = spec.nyquist(dt);
        if spec.f_max > nyquist * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "f_max = {} exceeds the Nyquist frequency {nyquist} of dt = {dt}",
                spec.f_max
            )));
        }
        let n = spec.n_freq;
        let df = spec.f_max / n as f64;
        let mut cos_basis = Vec::with_capacity(steps * n);
        let mut sin_basis = Vec::with_capacity(steps * n);
        for i in 0..steps {
            let t = i as f64 * dt;
            for k in 0..n {
                let f = (k as f64 + 0.5) * df;
                let amp = (spec.value(t, f) * df).sqrt();
                let (s, c) = (spec.angular(f) * t).sin_cos();
                cos_basis.push(amp * c);
                sin_basis.push(amp * s);
            }
        }
        Ok(Self {
            spec,
            dt,
            steps,
            cos_basis,
            sin_basis,
        })
    }

    pub fn spec(&self) -> &WvSpectrum {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Spectral-line weights `(A_k, B_k)` of a sample.
    pub fn coefficients(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = CounterRng::new(seed);
        (0..self.spec.n_freq).map(|_| rng.normal_pair()).unzip()
    }

    pub fn sample(&self, seed: u64) -> Trajectory<f64> {
        let n = self.spec.n_freq;
        let (a, b) = self.coefficients(seed);
        let values = (0..self.steps)
            .map(|i| {
                let c = &self.cos_basis[i * n..(i + 1) * n];
                let s = &self.sin_basis[i * n..(i + 1) * n];
                c.iter()
                    .zip(s)
                    .zip(a.iter().zip(&b))
                    .map(|((c, s), (a, b))| a * c + b * s)
                    .sum()
            })
            .collect();
        Trajectory::single(self.dt, 0.0, values).expect("finite synthesized series")
    }

    /// Samples `indices` of the ensemble keyed by `master_seed`, in parallel.
    /// Sample `l` always uses seed `master_seed ⊕ l`.
    pub fn sample_many(&self, master_seed: u64, indices: std::ops::Range<u64>) -> Vec<Trajectory<f64>> {
        indices
            .into_par_iter()
            .map(|l| self.sample(sample_seed(master_seed, l)))
            .collect()
    }
}

/// One sample on the grid `i·dt`, `i < steps`.
pub fn sample(spec: &WvSpectrum, seed: u64, dt: f64, steps: usize) -> Result<Trajectory<f64>> {
    Ok(ExcitationSampler::new(*spec, dt, steps)?.sample(seed))
}
