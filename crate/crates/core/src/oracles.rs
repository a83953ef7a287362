//! Independent reference computations used by the test suites.
//!
//! Nothing here shares numerical code with the production paths: modal
//! solutions use `nalgebra`'s eigensolver and matrix exponential, gradients
//! are checked by central differences, and variances by adaptive quadrature.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};

use crate::error::{Error, Result};
use crate::excitation::WvSpectrum;
use crate::oscillator::OscillatorModel;
use crate::structsim::BoucWenConfig;
use crate::training::{empirical_loss, Sample};
use crate::trajectory::Trajectory;

// --- parameter access ----------------------------------------------------------

/// Number of trainable scalars (Γ then Π, block order of `blocks()`).
pub fn param_count(model: &OscillatorModel<f64>) -> usize {
    model.gamma.blocks().iter().chain(model.pi.blocks().iter()).map(|b| b.len()).sum()
}

fn param_mut(model: &mut OscillatorModel<f64>, mut k: usize) -> &mut f64 {
    let OscillatorModel { gamma, pi, .. } = model;
    for block in gamma.blocks_mut().into_iter().chain(pi.blocks_mut()) {
        if k < block.len() {
            return &mut block[k];
        }
        k -= block.len();
    }
    panic!("parameter index out of range")
}

/// Flat analytic gradient in the same order as [`param_count`].
pub fn flat_gradient(model: &OscillatorModel<f64>, batch: &[&Sample<f64>]) -> Result<(f64, Vec<f64>)> {
    let (loss, g) = empirical_loss(model, batch)?;
    let flat = g.gamma.blocks().into_iter().chain(g.pi.blocks()).flatten().copied().collect();
    Ok((loss, flat))
}

/// Signs of every hidden pre-activation over the rollouts of `batch`.
fn activation_signature(model: &OscillatorModel<f64>, batch: &[&Sample<f64>]) -> Result<Vec<bool>> {
    let gin = model.gamma.input_dim();
    let pin = model.pi.input_dim();
    let mut sig = Vec::new();
    for s in batch {
        let (_, rec) = model.rollout(&s.input)?;
        for ((tapes, len), skip) in [(rec.gamma_tapes(), gin), (rec.pi_tapes(), pin)] {
            for tape in tapes.chunks_exact(len) {
                sig.extend(tape[skip..].iter().map(|v| *v > 0.0));
            }
        }
    }
    Ok(sig)
}

#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest `|a − f| / max(|a|, |f|, floor)` over checked parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose ±h probe changed the activation pattern.
    pub skipped: usize,
}

/// Compares the analytic loss gradient with central differences of step `h`.
/// Probes that flip any ReLU/PReLU pre-activation sign are skipped; the
/// relative-error floor is `1e-3·‖g‖∞`.
pub fn finite_difference_check(model: &OscillatorModel<f64>, batch: &[&Sample<f64>], h: f64) -> Result<FdReport> {
    let (_, grad) = flat_gradient(model, batch)?;
    let base_sig = activation_signature(model, batch)?;
    let g_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-3 * g_inf;
    let loss = |m: &OscillatorModel<f64>| empirical_loss(m, batch).map(|(l, _)| l);

    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = model.clone();
    for (k, a) in grad.iter().enumerate() {
        let theta = *param_mut(&mut probe, k);
        *param_mut(&mut probe, k) = theta + h;
        let lp = loss(&probe)?;
        let sp = activation_signature(&probe, batch)?;
        *param_mut(&mut probe, k) = theta - h;
        let lm = loss(&probe)?;
        let sm = activation_signature(&probe, batch)?;
        *param_mut(&mut probe, k) = theta;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let f = (lp - lm) / (2.0 * h);
        let denom = a.abs().max(f.abs()).max(floor);
        let rel = if denom == 0.0 { 0.0 } else { (a - f).abs() / denom };
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

// --- linear modal superposition ------------------------------------------------

/// Modal data of the linear (`λ = 1`) shear building.
#[derive(Debug, Clone)]
pub struct ModalModel {
    pub omega: Vec<f64>,
    pub zeta: f64,
    /// Mass-normalized mode shapes as columns.
    pub phi: DMatrix<f64>,
    /// `Γₙ = φₙᵀ·M·ι`.
    pub participation: Vec<f64>,
}

impl ModalModel {
    pub fn new(cfg: &BoucWenConfig) -> Self {
        let n = cfg.n_dof;
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = if i + 1 == n { cfg.k } else { 2.0 * cfg.k };
            if i + 1 < n {
                k[(i, i + 1)] = -cfg.k;
                k[(i + 1, i)] = -cfg.k;
            }
        }
        // M = m·I: the mass-normalized problem is K/m.
        let eig = SymmetricEigen::new(k / cfg.m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
        let omega = order.iter().map(|i| eig.eigenvalues[*i].sqrt()).collect();
        let phi = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])] / cfg.m.sqrt());
        let iota = DVector::from_vec(cfg.influence_vector());
        let participation = (0..n).map(|c| cfg.m * phi.column(c).dot(&iota)).collect();
        Self {
            omega,
            zeta: cfg.zeta,
            phi,
            participation,
        }
    }

    fn assemble(&self, modal: &[Vec<f64>], steps: usize, dt: f64) -> Result<Trajectory<f64>> {
        let n = self.omega.len();
        let mut out = vec![0.0; n * steps];
        for dof in 0..n {
            for i in 0..steps {
                out[dof * steps + i] = (0..n).map(|m| self.phi[(dof, m)] * modal[m][i]).sum();
            }
        }
        Trajectory::new(dt, 0.0, n, out)
    }

    /// Displacements from rest under `u(t) = a·sin(Ω t)`, in closed form.
    pub fn sine_response(&self, amplitude: f64, big_omega: f64, dt: f64, steps: usize) -> Result<Trajectory<f64>> {
        let modal: Vec<Vec<f64>> = (0..self.omega.len())
            .map(|m| {
                let w = self.omega[m];
                let z = self.zeta;
                let f = -self.participation[m] * amplitude;
                let d = (w * w - big_omega * big_omega).powi(2) + (2.0 * z * w * big_omega).powi(2);
                let a = f * (w * w - big_omega * big_omega) / d;
                let b = -f * 2.0 * z * w * big_omega / d;
                // particular: a·sin Ωt + b·cos Ωt
                let wd = w * (1.0 - z * z).sqrt();
                let c1 = -b;
                let c2 = (z * w * c1 - a * big_omega) / wd;
                (0..steps)
                    .map(|i| {
                        let t = i as f64 * dt;
                        a * (big_omega * t).sin()
                            + b * (big_omega * t).cos()
                            + (-z * w * t).exp() * (c1 * (wd * t).cos() + c2 * (wd * t).sin())
                    })
                    .collect()
            })
            .collect();
        self.assemble(&modal, steps, dt)
    }

    /// Displacements from rest under the piecewise-linear interpolant of
    /// `u`, integrated exactly per step with an augmented matrix exponential.
    pub fn piecewise_linear_response(&self, u: &Trajectory<f64>) -> Result<Trajectory<f64>> {
        if u.channels() != 1 {
            return Err(Error::invalid("modal oracle expects one excitation channel"));
        }
        let (dt, steps) = (u.dt, u.steps());
        let ue = u.channel(0);
        let modal: Vec<Vec<f64>> = (0..self.omega.len())
            .map(|m| {
                let w = self.omega[m];
                let g = self.participation[m];
                // s = [q, q', u, u'] with u' constant on the step.
                #[rustfmt::skip]
                let a = Matrix4::new(
                    0.0, 1.0, 0.0, 0.0,
                    -w * w, -2.0 * self.zeta * w, -g, 0.0,
                    0.0, 0.0, 0.0, 1.0,
                    0.0, 0.0, 0.0, 0.0,
                );
                let e = (a * dt).exp();
                let mut q = vec![0.0; steps];
                let (mut x, mut v) = (0.0, 0.0);
                for i in 0..steps - 1 {
                    let slope = (ue[i + 1] - ue[i]) / dt;
                    let s = nalgebra::Vector4::new(x, v, ue[i], slope);
                    let next = e * s;
                    x = next[0];
                    v = next[1];
                    q[i + 1] = x;
                }
                q
            })
            .collect();
        self.assemble(&modal, steps, dt)
    }
}

// --- quadrature ------------------------------------------------------------------

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = f(0.5 * (a + m));
    let rm = f(0.5 * (m + b));
    let left = (m - a) / 6.0 * (fa + 4.0 * lm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * rm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, lm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, rm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫₀^∞ W(t, f) df` by quadrature, truncated where the Gaussian factor
/// falls below `e^{−60}`.
pub fn variance_by_quadrature(spec: &WvSpectrum, t: f64) -> f64 {
    let ct = spec.decay * t;
    let f_hi = (60.0 / ct).sqrt();
    integrate(&|f| spec.value(t, f), 0.0, f_hi, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_form_variance() {
        let s = WvSpectrum::default();
        for t in [0.5, 1.0, 2.0, 5.0, 20.0] {
            let q = variance_by_quadrature(&s, t);
            let c = s.variance(t).unwrap();
            assert!((q - c).abs() / c < 1e-8, "t = {t}: {q} vs {c}");
        }
    }

    #[test]
    fn modal_model_is_mass_orthonormal() {
        let cfg = BoucWenConfig::default();
        let m = ModalModel::new(&cfg);
        let gram = m.phi.transpose() * &m.phi * cfg.m;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-12);
        // Σ Γₙ² = total mass for a mass-normalized basis.
        let total: f64 = m.participation.iter().map(|g| g * g).sum();
        assert!((total - 5.0 * cfg.m).abs() < 1e-8 * total);
    }

    #[test]
    fn sine_and_piecewise_agree_on_fine_grid() {
        let cfg = BoucWenConfig::default();
        let m = ModalModel::new(&cfg);
        let dt = 1e-4;
        let steps = 5001;
        let u = Trajectory::from_fn(dt, 0.0, 1, steps, |_, t: f64| 3.0 * (8.0 * t).sin()).unwrap();
        let a = m.sine_response(3.0, 8.0, dt, steps).unwrap();
        let b = m.piecewise_linear_response(&u).unwrap();
        let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.values().iter().map(|x| x * x).sum();
        assert!((num / den).sqrt() < 1e-6);
    }
}
