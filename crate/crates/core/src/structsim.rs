//! Five-story Bouc-Wen shear building under uniform base acceleration.
//!
//! ```text
//! M·Ẍ + C·Ẋ + λ·K·X + (1 − λ)·K̃·Z = −M·ι·u_e(t)
//! Żᵢ = ẋ̃ᵢ − β·|ẋ̃ᵢ|·|Zᵢ|^{s−1}·Zᵢ − γ·ẋ̃ᵢ·|Zᵢ|^s
//! ```
//!
//! where `x̃ = [X₁, X₂ − X₁, …, X₅ − X₄]` are inter-story drifts and `ι` is
//! the influence vector. The damping matrix gives every mode of `(M, K)` the
//! same damping ratio. The 15-dimensional first-order system is integrated
//! with classical RK4 from rest. Steps in which a drift rate changes sign
//! are split at the crossing, since `|ẋ̃ᵢ|` is not differentiable there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, SquareMatrix, JACOBI_MAX_SWEEPS};
use crate::trajectory::Trajectory;
use crate::Scalar;

/// Stiffness used to build modal damping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingStiffness {
    /// Initial stiffness `K`.
    #[default]
    Full,
    /// Elastic part `λ·K`.
    Elastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoucWenConfig {
    pub n_dof: usize,
    /// Floor mass, kg.
    pub m: f64,
    /// Story stiffness, N/m.
    pub k: f64,
    pub zeta: f64,
    /// Elastic fraction of the restoring force.
    pub lambda: f64,
    pub beta: f64,
    pub gamma_bw: f64,
    pub s_exp: f64,
    /// Seismic influence vector; empty means all ones.
    pub influence: Vec<f64>,
    pub damping_stiffness: DampingStiffness,
}

impl Default for BoucWenConfig {
    fn default() -> Self {
        Self {
            n_dof: 5,
            m: 1382.4,
            k: 1.7e6,
            zeta: 0.05,
            lambda: 0.01,
            beta: 2.0,
            gamma_bw: 2.0,
            s_exp: 3.0,
            influence: Vec::new(),
            damping_stiffness: DampingStiffness::Full,
        }
    }
}

impl BoucWenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dof == 0 {
            return Err(Error::invalid("Bouc-Wen system needs at least one story"));
        }
        if !(self.m > 0.0 && self.k > 0.0) {
            return Err(Error::invalid(format!("mass and stiffness must be positive (m = {}, k = {})", self.m, self.k)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("λ must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.s_exp >= 1.0) {
            return Err(Error::invalid(format!("hysteresis exponent must be ≥ 1, got {}", self.s_exp)));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::invalid(format!("damping ratio must be ≥ 0, got {}", self.zeta)));
        }
        if !self.influence.is_empty() && self.influence.len() != self.n_dof {
            return Err(Error::dim("influence vector", self.n_dof, self.influence.len()));
        }
        Ok(())
    }

    pub fn influence_vector(&self) -> Vec<f64> {
        if self.influence.is_empty() {
            vec![1.0; self.n_dof]
        } else {
            self.influence.clone()
        }
    }

    /// Ultimate hysteretic displacement `(β + γ)^{−1/s}`.
    pub fn z_ultimate(&self) -> f64 {
        (self.beta + self.gamma_bw).powf(-1.0 / self.s_exp)
    }
}

/// Structural matrices and the modal basis used for damping.
#[derive(Debug, Clone)]
pub struct StructuralMatrices<T> {
    pub mass: SquareMatrix<T>,
    pub stiffness: SquareMatrix<T>,
    pub hysteretic: SquareMatrix<T>,
    pub damping: SquareMatrix<T>,
    /// Natural circular frequencies of the damping basis, ascending (rad/s).
    pub omega: Vec<T>,
    /// Mass-normalized mode shapes as columns (`Φᵀ·M·Φ = I`).
    pub modes: SquareMatrix<T>,
}

pub fn build_matrices<T: Scalar>(cfg: &BoucWenConfig) -> Result<StructuralMatrices<T>> {
    cfg.validate()?;
    let n = cfg.n_dof;
    let m = T::lit(cfg.m);
    let k = T::lit(cfg.k);
    let mass = SquareMatrix::diagonal(&vec![m; n]);
    let stiffness = SquareMatrix::from_fn(n, |i, j| {
        if i == j {
            if i + 1 == n {
                k
            } else {
                k + k
            }
        } else if i.abs_diff(j) == 1 {
            -k
        } else {
            T::zero()
        }
    });
    let hysteretic = SquareMatrix::from_fn(n, |i, j| {
        if i == j {
            k
        } else if j == i + 1 {
            -k
        } else {
            T::zero()
        }
    });

    // M = m·I, so K·φ = ω²·M·φ reduces to the eigenproblem of K/m.
    let basis = match cfg.damping_stiffness {
        DampingStiffness::Full => stiffness.clone(),
        DampingStiffness::Elastic => stiffness.scale(T::lit(cfg.lambda)),
    };
    let eig = jacobi_eigen(&basis.scale(T::one() / m), T::epsilon() * T::lit(8.0), JACOBI_MAX_SWEEPS)?;
    let omega: Vec<T> = eig.values.iter().map(|v| v.max(T::zero()).sqrt()).collect();
    let modes = eig.vectors.scale(T::one() / m.sqrt());

    // C = M·Φ·diag(2ζω)·Φᵀ·M
    let two_zeta = T::lit(2.0 * cfg.zeta);
    let diag: Vec<T> = omega.iter().map(|w| two_zeta * *w).collect();
    let mphi = mass.matmul(&modes);
    let damping = mphi
        .matmul(&SquareMatrix::diagonal(&diag))
        .matmul(&mphi.transpose());

    Ok(StructuralMatrices {
        mass,
        stiffness,
        hysteretic,
        damping,
        omega,
        modes,
    })
}

/// `[X; V; Z]`, each of length `n_dof`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoucWenState<T> {
    pub x: Vec<T>,
    pub v: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> BoucWenState<T> {
    pub fn at_rest(n: usize) -> Self {
        Self {
            x: vec![T::zero(); n],
            v: vec![T::zero(); n],
            z: vec![T::zero(); n],
        }
    }

    fn to_flat(&self) -> Vec<T> {
        self.x.iter().chain(&self.v).chain(&self.z).copied().collect()
    }

    fn from_flat(s: &[T], n: usize) -> Self {
        Self {
            x: s[..n].to_vec(),
            v: s[n..2 * n].to_vec(),
            z: s[2 * n..3 * n].to_vec(),
        }
    }
}

/// Ground acceleration as a function of time.
pub trait Excitation<T> {
    fn at(&self, t: T) -> T;
}

/// Channel 0, linearly interpolated between grid samples.
impl<T: Scalar> Excitation<T> for Trajectory<T> {
    fn at(&self, t: T) -> T {
        self.interpolate(0, t)
    }
}

impl<T, F: Fn(T) -> T> Excitation<T> for F {
    fn at(&self, t: T) -> T {
        self(t)
    }
}

/// Which state blocks [`BoucWen::simulate`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outputs {
    /// `X₁..Xₙ`.
    Displacement,
    /// `X₁..Xₙ, V₁..Vₙ, Z₁..Zₙ`.
    Full,
}

/// A configured Bouc-Wen system ready to integrate.
#[derive(Debug, Clone)]
pub struct BoucWen<T> {
    cfg: BoucWenConfig,
    mats: StructuralMatrices<T>,
    influence: Vec<T>,
    inv_mass: Vec<T>,
}

impl<T: Scalar> BoucWen<T> {
    pub fn new(cfg: BoucWenConfig) -> Result<Self> {
        let mats = build_matrices(&cfg)?;
        let influence = cfg.influence_vector().into_iter().map(T::lit).collect();
        let inv_mass = (0..cfg.n_dof).map(|i| T::one() / mats.mass[(i, i)]).collect();
        Ok(Self {
            cfg,
            mats,
            influence,
            inv_mass,
        })
    }

    pub fn config(&self) -> &BoucWenConfig {
        &self.cfg
    }

    pub fn matrices(&self) -> &StructuralMatrices<T> {
        &self.mats
    }

    pub fn n_dof(&self) -> usize {
        self.cfg.n_dof
    }

    /// Time derivative of the flat state `[X; V; Z]` under ground acceleration `ue`.
    pub fn rhs_flat(&self, s: &[T], ue: T, out: &mut [T], work: &mut [T]) {
        let n = self.cfg.n_dof;
        let (x, rest) = s.split_at(n);
        let (v, z) = rest.split_at(n);
        let lambda = T::lit(self.cfg.lambda);
        let beta = T::lit(self.cfg.beta);
        let gamma = T::lit(self.cfg.gamma_bw);
        let s_exp = T::lit(self.cfg.s_exp);

        out[..n].copy_from_slice(v);

        // Restoring and damping forces: C·V + λ·K·X + (1 − λ)·K̃·Z.
        let (f, tmp) = work.split_at_mut(n);
        self.mats.damping.mul_vec_into(v, f);
        self.mats.stiffness.mul_vec_into(x, &mut tmp[..n]);
        for i in 0..n {
            f[i] += lambda * tmp[i];
        }
        self.mats.hysteretic.mul_vec_into(z, &mut tmp[..n]);
        let one_minus = T::one() - lambda;
        for i in 0..n {
            f[i] += one_minus * tmp[i];
            out[n + i] = -self.influence[i] * ue - self.inv_mass[i] * f[i];
        }

        for i in 0..n {
            let drift_rate = if i == 0 { v[0] } else { v[i] - v[i - 1] };
            let zi = z[i];
            let az = zi.abs();
            let az_pow = az.powf(s_exp - T::one());
            out[2 * n + i] = drift_rate - beta * drift_rate.abs() * az_pow * zi - gamma * drift_rate * az_pow * az;
        }
    }

    pub fn rhs(&self, state: &BoucWenState<T>, ue: T) -> BoucWenState<T> {
        let n = self.cfg.n_dof;
        let s = state.to_flat();
        let mut out = vec![T::zero(); 3 * n];
        let mut work = vec![T::zero(); 2 * n];
        self.rhs_flat(&s, ue, &mut out, &mut work);
        BoucWenState::from_flat(&out, n)
    }

    /// RK4 from rest on the grid of `u`; stage excitation at `tᵢ + Δt/2` is
    /// linearly interpolated.
    pub fn simulate(&self, u: &Trajectory<T>, outputs: Outputs) -> Result<Trajectory<T>> {
        if u.channels() != 1 {
            return Err(Error::dim("ground acceleration channels", 1, u.channels()));
        }
        self.simulate_with(u, u.dt, u.t0, u.steps(), outputs)
    }

    /// RK4 from rest with an arbitrary excitation function. Output is on the
    /// `dt` grid; internal steps may be split at drift-rate sign changes.
    pub fn simulate_with<E: Excitation<T> + ?Sized>(
        &self,
        excitation: &E,
        dt: T,
        t0: T,
        steps: usize,
        outputs: Outputs,
    ) -> Result<Trajectory<T>> {
        if !(dt > T::zero()) || steps == 0 {
            return Err(Error::invalid("simulation grid needs dt > 0 and at least one step"));
        }
        let n = self.cfg.n_dof;
        let dim = 3 * n;
        let channels = match outputs {
            Outputs::Displacement => n,
            Outputs::Full => dim,
        };
        let mut out = vec![T::zero(); channels * steps];
        let mut s = vec![T::zero(); dim];
        let mut next = vec![T::zero(); dim];
        let mut buf = Rk4Buffers::new(n);

        for i in 0..steps {
            for c in 0..channels {
                out[c * steps + i] = s[c];
            }
            if i + 1 == steps {
                break;
            }
            let t_end = t0 + dt * T::from_usize_lossy(i + 1);
            let mut t = t0 + dt * T::from_usize_lossy(i);
            // A drift rate changing sign makes the hysteretic law non-smooth;
            // such steps are split at the located crossing.
            for split in 0..=2 * n {
                let h = t_end - t;
                self.rk4_step(excitation, t, h, &s, &mut next, &mut buf);
                let theta = if split == 2 * n { None } else { self.first_drift_crossing(&s, &next, h, &buf) };
                match theta {
                    Some(theta) => {
                        let h1 = h * theta;
                        self.rk4_step(excitation, t, h1, &s, &mut next, &mut buf);
                        s.copy_from_slice(&next);
                        t += h1;
                    }
                    None => {
                        s.copy_from_slice(&next);
                        break;
                    }
                }
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    step: i + 1,
                    context: "Bouc-Wen state became non-finite".into(),
                });
            }
        }
        Trajectory::new(dt, t0, channels, out)
    }

    /// One classical RK4 step of size `h` from `(t, s)`; leaves the stage
    /// derivatives in `buf`.
    fn rk4_step<E: Excitation<T> + ?Sized>(&self, excitation: &E, t: T, h: T, s: &[T], out: &mut [T], buf: &mut Rk4Buffers<T>) {
        let dim = s.len();
        let half = h * T::lit(0.5);
        let two = T::lit(2.0);
        let (u0, um, u1) = (excitation.at(t), excitation.at(t + half), excitation.at(t + h));
        let Rk4Buffers { k1, k2, k3, k4, tmp, work } = buf;
        self.rhs_flat(s, u0, k1, work);
        for j in 0..dim {
            tmp[j] = s[j] + half * k1[j];
        }
        self.rhs_flat(tmp, um, k2, work);
        for j in 0..dim {
            tmp[j] = s[j] + half * k2[j];
        }
        self.rhs_flat(tmp, um, k3, work);
        for j in 0..dim {
            tmp[j] = s[j] + h * k3[j];
        }
        self.rhs_flat(tmp, u1, k4, work);
        let sixth = h / T::lit(6.0);
        for j in 0..dim {
            out[j] = s[j] + sixth * (k1[j] + two * k2[j] + two * k3[j] + k4[j]);
        }
    }

    /// Earliest sign change of any drift rate over a step, as a fraction of
    /// the step, from the cubic Hermite interpolant of the drift rates. The
    /// end slope comes from the last RK4 stage.
    fn first_drift_crossing(&self, s0: &[T], s1: &[T], h: T, buf: &Rk4Buffers<T>) -> Option<T> {
        let n = self.cfg.n_dof;
        let drift = |v: &[T], i: usize| if i == 0 { v[0] } else { v[i] - v[i - 1] };
        let min_theta = T::lit(1e-6);
        let mut best: Option<T> = None;
        for i in 0..n {
            let d0 = drift(&s0[n..2 * n], i);
            let d1 = drift(&s1[n..2 * n], i);
            if !(d0 * d1 < T::zero()) {
                continue;
            }
            let m0 = h * drift(&buf.k1[n..2 * n], i);
            let m1 = h * drift(&buf.k4[n..2 * n], i);
            let p = |x: T| {
                let x2 = x * x;
                let x3 = x2 * x;
                let two = T::lit(2.0);
                let three = T::lit(3.0);
                (two * x3 - three * x2 + T::one()) * d0 + (x3 - two * x2 + x) * m0 + (three * x2 - two * x3) * d1 + (x3 - x2) * m1
            };
            // p(0) and p(1) have opposite signs, so bisection finds a root.
            let (mut lo, mut hi) = (T::zero(), T::one());
            for _ in 0..60 {
                let mid = T::lit(0.5) * (lo + hi);
                if p(mid) * d0 > T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let theta = T::lit(0.5) * (lo + hi);
            if theta > min_theta && theta < T::one() - min_theta && best.is_none_or(|b| theta < b) {
                best = Some(theta);
            }
        }
        best
    }

    /// Modal damping ratios recovered from `C` as `diag(ΦᵀCΦ) / (2ω)`.
    pub fn modal_damping_ratios(&self) -> Vec<T> {
        let phi = &self.mats.modes;
        let c_modal = phi.transpose().matmul(&self.mats.damping).matmul(phi);
        self.mats
            .omega
            .iter()
            .enumerate()
            .map(|(i, w)| c_modal[(i, i)] / (T::lit(2.0) * *w))
            .collect()
    }
}

struct Rk4Buffers<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
    work: Vec<T>,
}

impl<T: Scalar> Rk4Buffers<T> {
    fn new(n: usize) -> Self {
        let z = || vec![T::zero(); 3 * n];
        Self { k1: z(), k2: z(), k3: z(), k4: z(), tmp: z(), work: vec![T::zero(); 2 * n] }
    }
}

/// Convenience wrapper around [`BoucWen::rhs`].
pub fn bouc_wen_rhs<T: Scalar>(sys: &BoucWen<T>, state: &BoucWenState<T>, ue: T) -> BoucWenState<T> {
    sys.rhs(state, ue)
}

/// Running maximum of `|x|` on one channel: `E(tᵢ) = max_{j ≤ i} |x(tⱼ)|`.
pub fn extreme_process<T: Scalar>(x: &Trajectory<T>, channel: usize) -> Result<Trajectory<T>> {
    if channel >= x.channels() {
        return Err(Error::dim("channel index", x.channels(), channel));
    }
    let mut peak = T::zero();
    let values = x
        .channel(channel)
        .iter()
        .map(|v| {
            peak = peak.max(v.abs());
            peak
        })
        .collect();
    Trajectory::single(x.dt, x.t0, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiffness_layout() {
        let cfg = BoucWenConfig {
            k: 1.0,
            ..BoucWenConfig::default()
        };
        let m = build_matrices::<f64>(&cfg).unwrap();
        let k = &m.stiffness;
        for i in 0..4 {
            assert_eq!(k[(i, i)], 2.0);
            assert_eq!(k[(i, i + 1)], -1.0);
            assert_eq!(k[(i + 1, i)], -1.0);
        }
        assert_eq!(k[(4, 4)], 1.0);
        assert_eq!(k[(0, 2)], 0.0);
        let kt = &m.hysteretic;
        assert_eq!(kt[(0, 0)], 1.0);
        assert_eq!(kt[(0, 1)], -1.0);
        assert_eq!(kt[(1, 0)], 0.0);
        assert_eq!(kt[(4, 4)], 1.0);
    }

    #[test]
    fn undamped_has_zero_damping_matrix() {
        let cfg = BoucWenConfig {
            zeta: 0.0,
            ..BoucWenConfig::default()
        };
        let m = build_matrices::<f64>(&cfg).unwrap();
        assert_eq!(m.damping.max_abs(), 0.0);
    }

    #[test]
    fn modal_ratios_recovered() {
        let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
        for z in sys.modal_damping_ratios() {
            assert!((z - 0.05).abs() < 1e-10, "{z}");
        }
        // Elastic-stiffness variant damps the softer modes of λK instead.
        let el = BoucWen::<f64>::new(BoucWenConfig {
            damping_stiffness: DampingStiffness::Elastic,
            ..BoucWenConfig::default()
        })
        .unwrap();
        let ratio = el.matrices().omega[0] / sys.matrices().omega[0];
        assert!((ratio - 0.01f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rhs_special_cases() {
        let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
        let rest = BoucWenState::at_rest(5);
        let d = sys.rhs(&rest, 1.0);
        assert_eq!(d.v, vec![-1.0; 5]);
        assert_eq!(d.x, vec![0.0; 5]);
        assert_eq!(d.z, vec![0.0; 5]);

        let mut s = BoucWenState::at_rest(5);
        s.v = vec![0.1, 0.3, -0.2, 0.0, 0.5];
        let d = sys.rhs(&s, 0.0);
        let drift = [0.1, 0.2, -0.5, 0.2, 0.5];
        for (zd, dr) in d.z.iter().zip(drift) {
            assert!((zd - dr).abs() < 1e-15);
        }

        let lin = BoucWen::<f64>::new(BoucWenConfig {
            beta: 0.0,
            gamma_bw: 0.0,
            ..BoucWenConfig::default()
        })
        .unwrap();
        s.z = vec![0.3, -0.7, 0.1, 0.9, -0.2];
        let d = lin.rhs(&s, 0.0);
        for (zd, dr) in d.z.iter().zip(drift) {
            assert!((zd - dr).abs() < 1e-15);
        }
    }

    #[test]
    fn rest_without_forcing() {
        let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
        let u = Trajectory::zeros(0.01, 0.0, 1, 100).unwrap();
        let out = sys.simulate(&u, Outputs::Full).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn odd_symmetry_is_exact() {
        let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
        let u = Trajectory::from_fn(0.01, 0.0, 1, 400, |_, t: f64| 30.0 * (7.0 * t).sin() * t).unwrap();
        let neg = u.map(|v| -v).unwrap();
        let a = sys.simulate(&u, Outputs::Full).unwrap();
        let b = sys.simulate(&neg, Outputs::Full).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn extreme_process_examples() {
        let x = Trajectory::single(1.0, 0.0, vec![1.0, -3.0, 2.0]).unwrap();
        assert_eq!(extreme_process(&x, 0).unwrap().values(), &[1.0, 3.0, 3.0]);
        let c = Trajectory::single(1.0, 0.0, vec![-2.5; 4]).unwrap();
        assert_eq!(extreme_process(&c, 0).unwrap().values(), &[2.5; 4]);
        assert!(extreme_process(&x, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BoucWenConfig { m: 0.0, ..Default::default() }.validate().is_err());
        assert!(BoucWenConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(BoucWenConfig { s_exp: 0.5, ..Default::default() }.validate().is_err());
        assert!(BoucWenConfig { influence: vec![1.0; 3], ..Default::default() }.validate().is_err());
        assert!((BoucWenConfig::default().z_ultimate() - 4f64.powf(-1.0 / 3.0)).abs() < 1e-15);
    }
}
