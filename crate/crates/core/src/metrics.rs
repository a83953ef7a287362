//! Evaluation statistics: relative errors, log-log power-law fits, empirical
//! CDFs, kernel density estimates and the two-sample KS distance.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub relative_error: f64,
    pub n_samples: usize,
    pub n_steps: usize,
}

fn check_pairs(targets: &[Trajectory<f64>], predictions: &[Trajectory<f64>]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    if targets.len() != predictions.len() {
        return Err(Error::dim("prediction count", targets.len(), predictions.len()));
    }
    Ok(())
}

/// `Σ_l Σ_i (X − X̃)² / Σ_l Σ_i X²` over every sample, channel and grid point.
pub fn relative_error_response(targets: &[Trajectory<f64>], predictions: &[Trajectory<f64>]) -> Result<ErrorReport> {
    check_pairs(targets, predictions)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (l, (x, y)) in targets.iter().zip(predictions).enumerate() {
        if x.channels() != y.channels() || x.steps() != y.steps() {
            return Err(Error::invalid(format!(
                "sample {l}: prediction is {}×{}, target is {}×{}",
                y.channels(),
                y.steps(),
                x.channels(),
                x.steps()
            )));
        }
        for (a, b) in x.values().iter().zip(y.values()) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("relative error undefined: all targets are zero"));
    }
    Ok(ErrorReport {
        relative_error: num / den,
        n_samples: targets.len(),
        n_steps: targets[0].steps(),
    })
}

/// Number of grid points `round(horizon/dt)` summed over a horizon; the sum
/// runs over `i = 0 … horizon/dt − 1`.
pub fn horizon_steps(horizon: f64, dt: f64) -> Result<usize> {
    let k = horizon / dt;
    let n = k.round();
    if !(horizon > 0.0) || (k - n).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::invalid(format!("horizon {horizon} s is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Extreme-value error with asymmetric horizons: the numerator sums over
/// the first `T_pred/dt` grid points, the denominator over the first
/// `T_norm/dt` points of the targets.
pub fn relative_error_extreme(
    targets: &[Trajectory<f64>],
    predictions: &[Trajectory<f64>],
    t_pred: f64,
    t_norm: f64,
) -> Result<ErrorReport> {
    check_pairs(targets, predictions)?;
    if t_pred > t_norm * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "prediction horizon {t_pred} exceeds the normalization horizon {t_norm}"
        )));
    }
    let dt = targets[0].dt;
    let n_pred = horizon_steps(t_pred, dt)?;
    let n_norm = horizon_steps(t_norm, dt)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (l, (x, y)) in targets.iter().zip(predictions).enumerate() {
        if x.steps() < n_norm || y.steps() < n_pred || x.channels() != y.channels() {
            return Err(Error::invalid(format!(
                "sample {l}: target has {} steps (need {n_norm}), prediction {} (need {n_pred})",
                x.steps(),
                y.steps()
            )));
        }
        for c in 0..x.channels() {
            let (xc, yc) = (x.channel(c), y.channel(c));
            for i in 0..n_pred {
                num += (xc[i] - yc[i]).powi(2);
            }
            den += xc[..n_norm].iter().map(|v| v * v).sum::<f64>();
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("relative error undefined: all targets are zero"));
    }
    Ok(ErrorReport {
        relative_error: num / den,
        n_samples: targets.len(),
        n_steps: n_pred,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least squares on `(ln x, ln y)`: `y ≈ prefactor·x^exponent`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::invalid("power-law fit needs at least two points"));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::invalid(format!("power-law fit needs positive values, got ({x}, {y})")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::invalid("power-law fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerLawFit {
        exponent: slope,
        prefactor: intercept.exp(),
        r_squared,
    })
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical CDF of an empty sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "distribution samples".into(),
            });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    /// Fraction of samples `≤ x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Linear-interpolated sample quantile, `p ∈ [0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let pos = p.clamp(0.0, 1.0) * (self.sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        self.sorted[lo] + (pos - lo as f64) * (self.sorted[hi] - self.sorted[lo])
    }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(a: &EmpiricalCdf, b: &EmpiricalCdf) -> f64 {
    let (xa, xb) = (a.sorted(), b.sorted());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Silverman's rule `0.9·min(σ, IQR/1.34)·n^{−1/5}`, falling back to `σ`,
/// then `|x₀|`, then 1 when the spread is zero.
pub fn silverman_bandwidth(cdf: &EmpiricalCdf) -> f64 {
    let x = cdf.sorted();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let iqr = cdf.quantile(0.75) - cdf.quantile(0.25);
    let mut lo = sd.min(iqr / 1.34);
    if lo <= 0.0 {
        lo = sd;
    }
    if lo <= 0.0 {
        lo = x[0].abs();
    }
    if lo <= 0.0 {
        lo = 1.0;
    }
    0.9 * lo * n.powf(-0.2)
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde<'a> {
    samples: &'a [f64],
    pub bandwidth: f64,
}

impl<'a> Kde<'a> {
    pub fn new(samples: &'a [f64], bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("density estimate of an empty sample"));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { samples, bandwidth })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (std::f64::consts::TAU).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityMethod {
    /// Gaussian kernel with Silverman bandwidth, tabulated from
    /// `min − 6h` to `max + 6h` with spacing at most `h/4`.
    Kde,
    /// Equal-width bins over `[min, max]`.
    Histogram { n_bins: usize },
}

/// Tabulated density. For a KDE `points` are grid nodes; for a histogram they
/// are bin centers with `bin_width` set.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub points: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: Option<f64>,
    pub bin_width: Option<f64>,
}

impl Density {
    /// Total mass: trapezoid rule on the KDE grid, bin sum for histograms.
    pub fn mass(&self) -> f64 {
        match self.bin_width {
            Some(w) => self.density.iter().sum::<f64>() * w,
            None => self
                .points
                .windows(2)
                .zip(self.density.windows(2))
                .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
                .sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Distribution {
    pub pdf: Density,
    pub cdf: EmpiricalCdf,
}

pub fn empirical_distribution(samples: &[f64], method: DensityMethod) -> Result<Distribution> {
    let cdf = EmpiricalCdf::new(samples)?;
    let (lo, hi) = (cdf.sorted()[0], *cdf.sorted().last().expect("nonempty"));
    let pdf = match method {
        DensityMethod::Kde => {
            let h = silverman_bandwidth(&cdf);
            let kde = Kde::new(cdf.sorted(), h)?;
            let (a, b) = (lo - 6.0 * h, hi + 6.0 * h);
            let n = ((b - a) / (0.25 * h)).ceil() as usize + 1;
            let step = (b - a) / (n - 1) as f64;
            let points: Vec<f64> = (0..n).map(|i| a + i as f64 * step).collect();
            let density = points.iter().map(|x| kde.eval(*x)).collect();
            Density {
                points,
                density,
                bandwidth: Some(h),
                bin_width: None,
            }
        }
        DensityMethod::Histogram { n_bins } => {
            if n_bins == 0 {
                return Err(Error::invalid("histogram needs at least one bin"));
            }
            let (start, width) = if hi > lo {
                (lo, (hi - lo) / n_bins as f64)
            } else {
                (lo - 0.5, 1.0 / n_bins as f64)
            };
            let mut counts = vec![0usize; n_bins];
            for v in cdf.sorted() {
                let k = (((v - start) / width) as usize).min(n_bins - 1);
                counts[k] += 1;
            }
            let total = cdf.len() as f64;
            Density {
                points: (0..n_bins).map(|k| start + (k as f64 + 0.5) * width).collect(),
                density: counts.iter().map(|c| *c as f64 / (total * width)).collect(),
                bandwidth: None,
                bin_width: Some(width),
            }
        }
    };
    Ok(Distribution { pdf, cdf })
}

/// `value,density,cdf` rows on the density grid.
pub fn write_distribution_csv<W: Write>(mut w: W, dist: &Distribution) -> Result<()> {
    writeln!(w, "value,density,cdf")?;
    for (x, d) in dist.pdf.points.iter().zip(&dist.pdf.density) {
        writeln!(w, "{x:e},{d:e},{:e}", dist.cdf.eval(*x))?;
    }
    Ok(())
}

/// `x,y` rows.
pub fn write_xy_csv<W: Write>(mut w: W, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "{},{}", header.0, header.1)?;
    for (x, y) in points {
        writeln!(w, "{x:e},{y:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> Trajectory<f64> {
        Trajectory::single(0.5, 0.0, v.to_vec()).unwrap()
    }

    #[test]
    fn response_error_cases() {
        let x = vec![series(&[1.0, -2.0, 3.0]), series(&[0.5, 0.0, 1.0])];
        assert_eq!(relative_error_response(&x, &x).unwrap().relative_error, 0.0);
        let zero: Vec<_> = x.iter().map(|t| t.map(|_| 0.0).unwrap()).collect();
        assert_eq!(relative_error_response(&x, &zero).unwrap().relative_error, 1.0);
        let double: Vec<_> = x.iter().map(|t| t.map(|v| 2.0 * v).unwrap()).collect();
        assert_eq!(relative_error_response(&x, &double).unwrap().relative_error, 1.0);
        assert!(relative_error_response(&zero, &x).is_err());
        assert!(relative_error_response(&x, &x[..1]).is_err());
    }

    #[test]
    fn extreme_error_horizons() {
        // dt = 0.5: T_norm = 2 → 4 points, T_pred = 1 → 2 points.
        let x = vec![series(&[1.0, 2.0, 3.0, 4.0, 5.0])];
        let pred = vec![series(&[0.0, 0.0])];
        let r = relative_error_extreme(&x, &pred, 1.0, 2.0).unwrap();
        assert_eq!(r.relative_error, 5.0 / 30.0);
        assert_eq!(relative_error_extreme(&x, &x, 2.0, 2.0).unwrap().relative_error, 0.0);
        assert!(relative_error_extreme(&x, &pred, 2.0, 1.0).is_err());
        assert!(relative_error_extreme(&x, &pred, 1.0, 3.0).is_err());
        assert!(relative_error_extreme(&x, &pred, 0.7, 2.0).is_err());
    }

    #[test]
    fn power_law_examples() {
        let f = fit_power_law(&[(100.0, 1e-2), (400.0, 5e-3), (1600.0, 2.5e-3)]).unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = fit_power_law(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)]).unwrap();
        assert_eq!(f.exponent, 0.0);
        let pts: Vec<_> = [5.0f64, 10.0, 20.0].iter().map(|x| (*x, 3.0 * x.powf(1.5))).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.exponent - 1.5).abs() < 1e-12);
        assert!((f.prefactor - 3.0).abs() < 1e-10);
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(fit_power_law(&[(1.0, -1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn cdf_examples() {
        let c = EmpiricalCdf::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.eval(2.5), 0.5);
        assert_eq!(c.eval(2.0), 0.5);
        assert_eq!(c.eval(0.0), 0.0);
        assert_eq!(c.eval(4.0), 1.0);
        let d = EmpiricalCdf::new(&[7.0; 5]).unwrap();
        assert_eq!(d.eval(7.0 - 1e-12), 0.0);
        assert_eq!(d.eval(7.0), 1.0);
        assert!(EmpiricalCdf::new(&[]).is_err());
    }

    #[test]
    fn ks_examples() {
        let a = EmpiricalCdf::new(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ks_distance(&a, &a), 0.0);
        let b = EmpiricalCdf::new(&[10.0, 11.0]).unwrap();
        assert_eq!(ks_distance(&a, &b), 1.0);
        let c = EmpiricalCdf::new(&[1.5, 2.5, 3.5]).unwrap();
        assert!((ks_distance(&a, &c) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn densities_have_unit_mass() {
        let samples: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let k = empirical_distribution(&samples, DensityMethod::Kde).unwrap();
        assert!((k.pdf.mass() - 1.0).abs() < 1e-6);
        assert!(k.pdf.density.iter().all(|d| *d >= 0.0));
        let h = empirical_distribution(&samples, DensityMethod::Histogram { n_bins: 17 }).unwrap();
        assert!((h.pdf.mass() - 1.0).abs() < 1e-12);
        let flat = empirical_distribution(&[3.0; 10], DensityMethod::Kde).unwrap();
        assert!((flat.pdf.mass() - 1.0).abs() < 1e-6);
        let flat_h = empirical_distribution(&[3.0; 10], DensityMethod::Histogram { n_bins: 4 }).unwrap();
        assert!((flat_h.pdf.mass() - 1.0).abs() < 1e-12);
    }
}
