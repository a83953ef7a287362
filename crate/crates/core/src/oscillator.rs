//! The neural oscillator `x'' = Γ(x, x', u)`, `y = Π(x, u(0), t)` with
//! `x(0) = x'(0) = 0`.
//!
//! Time stepping is Heun's method on the state `z = [x; x']`:
//!
//! ```text
//! k₁ = [z₂; Γ(z₁, z₂, u(tᵢ))]
//! k₂ = [z₂ + Δt·k₁₂; Γ(z₁ + Δt·k₁₁, z₂ + Δt·k₁₂, u(tᵢ₊₁))]
//! z(tᵢ₊₁) = z(tᵢ) + ½Δt·(k₁ + k₂)
//! ```
//!
//! and the read-out is evaluated at every grid point including `t₀`.
//! Gradients are the exact adjoint of this discrete scheme: the reverse
//! sweep replays the stored Γ/Π tapes, so they agree with finite differences
//! of the discrete rollout to rounding error.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpParams, ParamGrads};
use crate::trajectory::Trajectory;
use crate::Scalar;

/// Channel counts: `p` inputs, `q` outputs, `r` oscillator states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub r: usize,
}

/// Which blocks of `[x, x', u]` are fed to Γ.
///
/// The default feeds all three (input width `2r + p`). Dropping blocks is an
/// explicit override for layouts with narrower Γ inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaInputs {
    pub position: bool,
    pub velocity: bool,
    pub input: bool,
}

impl Default for GammaInputs {
    fn default() -> Self {
        Self {
            position: true,
            velocity: true,
            input: true,
        }
    }
}

impl GammaInputs {
    pub fn width(&self, dims: Dims) -> usize {
        usize::from(self.position) * dims.r
            + usize::from(self.velocity) * dims.r
            + usize::from(self.input) * dims.p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorModel<T> {
    pub gamma: MlpParams<T>,
    pub pi: MlpParams<T>,
    dims: Dims,
    gamma_inputs: GammaInputs,
}

/// States and activation tapes of one rollout, consumed by
/// [`OscillatorModel::rollout_vjp`].
#[derive(Debug, Clone)]
pub struct RolloutRecord<T> {
    steps: usize,
    dims: Dims,
    /// Step-major: `z(tᵢ)` is `z[i·2r .. (i+1)·2r]`; `z(t₀) = 0`.
    z: Vec<T>,
    gamma_tape_len: usize,
    /// Per step `i < steps − 1`: the k₁ tape then the k₂ tape.
    gamma_tapes: Vec<T>,
    pi_tape_len: usize,
    pi_tapes: Vec<T>,
}

impl<T: Scalar> RolloutRecord<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `[x; x']` at grid point `i`.
    pub fn state(&self, i: usize) -> &[T] {
        let n = 2 * self.dims.r;
        &self.z[i * n..(i + 1) * n]
    }

    /// Concatenated Γ activation tapes (k₁ then k₂ per step) and the length
    /// of one tape.
    pub fn gamma_tapes(&self) -> (&[T], usize) {
        (&self.gamma_tapes, self.gamma_tape_len)
    }

    /// Concatenated Π activation tapes, one per grid point, and the length of
    /// one tape.
    pub fn pi_tapes(&self) -> (&[T], usize) {
        (&self.pi_tapes, self.pi_tape_len)
    }
}

impl<T: Scalar> OscillatorModel<T> {
    pub fn new(
        gamma: MlpParams<T>,
        pi: MlpParams<T>,
        dims: Dims,
        gamma_inputs: GammaInputs,
    ) -> Result<Self> {
        if dims.p == 0 || dims.q == 0 || dims.r == 0 {
            return Err(Error::invalid(format!("all of p, q, r must be positive: {dims:?}")));
        }
        let gin = gamma_inputs.width(dims);
        if gin == 0 {
            return Err(Error::invalid("Γ must receive at least one input block"));
        }
        if gamma.input_dim() != gin {
            return Err(Error::dim("Γ input width", gin, gamma.input_dim()));
        }
        if gamma.output_dim() != dims.r {
            return Err(Error::dim("Γ output width", dims.r, gamma.output_dim()));
        }
        if pi.input_dim() != dims.r + dims.p + 1 {
            return Err(Error::dim("Π input width", dims.r + dims.p + 1, pi.input_dim()));
        }
        if pi.output_dim() != dims.q {
            return Err(Error::dim("Π output width", dims.q, pi.output_dim()));
        }
        Ok(Self {
            gamma,
            pi,
            dims,
            gamma_inputs,
        })
    }

    /// Glorot-initialized model. Γ and Π are both drawn from `seed`.
    pub fn init(
        seed: u64,
        dims: Dims,
        gamma_hidden: &[usize],
        pi_hidden: &[usize],
        activation: Activation<T>,
        gamma_inputs: GammaInputs,
    ) -> Result<Self> {
        let mut gl = vec![gamma_inputs.width(dims)];
        gl.extend_from_slice(gamma_hidden);
        gl.push(dims.r);
        let mut pl = vec![dims.r + dims.p + 1];
        pl.extend_from_slice(pi_hidden);
        pl.push(dims.q);
        let gamma = MlpParams::init(seed, &gl, activation)?;
        let pi = MlpParams::init(seed, &pl, activation)?;
        Self::new(gamma, pi, dims, gamma_inputs)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn gamma_inputs(&self) -> GammaInputs {
        self.gamma_inputs
    }

    pub fn num_params(&self) -> usize {
        self.gamma.num_params() + self.pi.num_params()
    }

    pub fn cast<U: Scalar>(&self) -> OscillatorModel<U> {
        OscillatorModel {
            gamma: self.gamma.cast(),
            pi: self.pi.cast(),
            dims: self.dims,
            gamma_inputs: self.gamma_inputs,
        }
    }

    fn check_input(&self, u: &Trajectory<T>) -> Result<()> {
        if u.channels() != self.dims.p {
            return Err(Error::dim("input channels", self.dims.p, u.channels()));
        }
        Ok(())
    }

    #[inline]
    fn fill_gamma_input(&self, x: &[T], v: &[T], u: &[T], out: &mut [T]) {
        let mut k = 0;
        if self.gamma_inputs.position {
            out[k..k + x.len()].copy_from_slice(x);
            k += x.len();
        }
        if self.gamma_inputs.velocity {
            out[k..k + v.len()].copy_from_slice(v);
            k += v.len();
        }
        if self.gamma_inputs.input {
            out[k..k + u.len()].copy_from_slice(u);
        }
    }

    /// Adds the Γ input cotangent back onto the `(x, x')` cotangents.
    #[inline]
    fn scatter_gamma_bar(&self, gin_bar: &[T], x_bar: &mut [T], v_bar: &mut [T]) {
        let r = self.dims.r;
        let mut k = 0;
        if self.gamma_inputs.position {
            for (d, s) in x_bar.iter_mut().zip(&gin_bar[k..k + r]) {
                *d += *s;
            }
            k += r;
        }
        if self.gamma_inputs.velocity {
            for (d, s) in v_bar.iter_mut().zip(&gin_bar[k..k + r]) {
                *d += *s;
            }
        }
    }

    /// Integrates the oscillator over the grid of `u`; returns the read-out
    /// trajectory (`q` channels, same grid) and the record needed for
    /// [`Self::rollout_vjp`].
    pub fn rollout(&self, u: &Trajectory<T>) -> Result<(Trajectory<T>, RolloutRecord<T>)> {
        self.run(u, true).map(|(y, rec)| (y, rec.expect("record requested")))
    }

    /// Forward rollout without keeping activation tapes.
    pub fn predict(&self, u: &Trajectory<T>) -> Result<Trajectory<T>> {
        self.run(u, false).map(|(y, _)| y)
    }

    fn run(&self, u: &Trajectory<T>, keep: bool) -> Result<(Trajectory<T>, Option<RolloutRecord<T>>)> {
        self.check_input(u)?;
        let Dims { p, q, r } = self.dims;
        let steps = u.steps();
        let n = 2 * r;
        let dt = u.dt;
        let half = dt * T::lit(0.5);

        let glen = self.gamma.tape_len();
        let plen = self.pi.tape_len();
        let mut gamma_tapes = if keep {
            vec![T::zero(); 2 * (steps - 1) * glen]
        } else {
            Vec::new()
        };
        let mut pi_tapes = if keep { vec![T::zero(); steps * plen] } else { Vec::new() };
        let mut scratch_g = vec![T::zero(); glen];
        let mut scratch_p = vec![T::zero(); plen];
        let mut work = vec![T::zero(); self.gamma.scratch_len().max(self.pi.scratch_len())];
        let mut z_hist = if keep { vec![T::zero(); steps * n] } else { Vec::new() };

        let mut z = vec![T::zero(); n];
        let mut zt = vec![T::zero(); n];
        let mut k1 = vec![T::zero(); n];
        let mut k2 = vec![T::zero(); n];
        let mut gin = vec![T::zero(); self.gamma.input_dim()];
        let mut pin = vec![T::zero(); r + p + 1];
        let mut u_i = vec![T::zero(); p];
        let mut u_next = vec![T::zero(); p];
        let mut y_i = vec![T::zero(); q];
        let mut y = vec![T::zero(); q * steps];

        u.sample_into(0, &mut u_i);
        pin[r..r + p].copy_from_slice(&u_i);

        for i in 0..steps {
            // Read-out at tᵢ.
            pin[..r].copy_from_slice(&z[..r]);
            pin[r + p] = u.time(i);
            let tape = if keep {
                &mut pi_tapes[i * plen..(i + 1) * plen]
            } else {
                &mut scratch_p[..]
            };
            self.pi.forward_tape_with(&pin, tape, &mut y_i, &mut work);
            for (c, v) in y_i.iter().enumerate() {
                y[c * steps + i] = *v;
            }
            if keep {
                z_hist[i * n..(i + 1) * n].copy_from_slice(&z);
            }
            if i + 1 == steps {
                break;
            }

            u.sample_into(i, &mut u_i);
            u.sample_into(i + 1, &mut u_next);

            // k₁
            k1[..r].copy_from_slice(&z[r..]);
            self.fill_gamma_input(&z[..r], &z[r..], &u_i, &mut gin);
            let tape = if keep {
                &mut gamma_tapes[2 * i * glen..(2 * i + 1) * glen]
            } else {
                &mut scratch_g[..]
            };
            self.gamma.forward_tape_with(&gin, tape, &mut k1[r..], &mut work);

            // k₂
            for j in 0..n {
                zt[j] = z[j] + dt * k1[j];
            }
            k2[..r].copy_from_slice(&zt[r..]);
            self.fill_gamma_input(&zt[..r], &zt[r..], &u_next, &mut gin);
            let tape = if keep {
                &mut gamma_tapes[(2 * i + 1) * glen..(2 * i + 2) * glen]
            } else {
                &mut scratch_g[..]
            };
            self.gamma.forward_tape_with(&gin, tape, &mut k2[r..], &mut work);

            for j in 0..n {
                z[j] += half * (k1[j] + k2[j]);
            }
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    step: i + 1,
                    context: "oscillator state became non-finite".into(),
                });
            }
        }

        let y = Trajectory::new(u.dt, u.t0, q, y)?;
        let record = keep.then(|| RolloutRecord {
            steps,
            dims: self.dims,
            z: z_hist,
            gamma_tape_len: glen,
            gamma_tapes,
            pi_tape_len: plen,
            pi_tapes,
        });
        Ok((y, record))
    }

    /// Exact gradient of `Σᵢ y_bar(tᵢ)·y(tᵢ)` with respect to every Γ and Π
    /// parameter.
    pub fn rollout_vjp(
        &self,
        u: &Trajectory<T>,
        record: &RolloutRecord<T>,
        y_bar: &Trajectory<T>,
    ) -> Result<(ParamGrads<T>, ParamGrads<T>)> {
        let mut g_gamma = ParamGrads::zeros_like(&self.gamma);
        let mut g_pi = ParamGrads::zeros_like(&self.pi);
        if y_bar.channels() != self.dims.q || y_bar.steps() != u.steps() {
            return Err(Error::invalid(format!(
                "cotangent shape {}×{} does not match output {}×{}",
                y_bar.channels(),
                y_bar.steps(),
                self.dims.q,
                u.steps()
            )));
        }
        self.accumulate_vjp(u, record, y_bar.values(), &mut g_gamma, &mut g_pi)?;
        Ok((g_gamma, g_pi))
    }

    /// Like [`Self::rollout_vjp`] but accumulates into existing gradients.
    /// `y_bar` is channel-major `[q × steps]`.
    pub fn accumulate_vjp(
        &self,
        u: &Trajectory<T>,
        record: &RolloutRecord<T>,
        y_bar: &[T],
        g_gamma: &mut ParamGrads<T>,
        g_pi: &mut ParamGrads<T>,
    ) -> Result<()> {
        self.check_input(u)?;
        let steps = u.steps();
        if record.steps != steps
            || record.dims != self.dims
            || record.gamma_tape_len != self.gamma.tape_len()
            || record.pi_tape_len != self.pi.tape_len()
        {
            return Err(Error::invalid(
                "stale rollout record: produced by a different model or input",
            ));
        }
        if y_bar.len() != self.dims.q * steps {
            return Err(Error::dim("output cotangent", self.dims.q * steps, y_bar.len()));
        }
        if !g_gamma.matches(&self.gamma) || !g_pi.matches(&self.pi) {
            return Err(Error::invalid("gradient buffers do not match the model"));
        }

        let Dims { p, q, r } = self.dims;
        let n = 2 * r;
        let dt = u.dt;
        let half = dt * T::lit(0.5);
        let glen = record.gamma_tape_len;
        let plen = record.pi_tape_len;

        let mut zbar = vec![T::zero(); n];
        let mut k1bar = vec![T::zero(); n];
        let mut k2bar = vec![T::zero(); n];
        let mut ztbar = vec![T::zero(); n];
        let mut gin_bar = vec![T::zero(); self.gamma.input_dim()];
        let mut pin_bar = vec![T::zero(); r + p + 1];
        let mut ybar_i = vec![T::zero(); q];
        let mut work = vec![T::zero(); self.gamma.scratch_len().max(self.pi.scratch_len())];
        let mut work_p = work.clone();

        let mut add_readout = |i: usize, zbar: &mut [T], g_pi: &mut ParamGrads<T>| {
            for c in 0..q {
                ybar_i[c] = y_bar[c * steps + i];
            }
            if ybar_i.iter().all(|v| *v == T::zero()) {
                return;
            }
            let tape = &record.pi_tapes[i * plen..(i + 1) * plen];
            self.pi.vjp_tape_with(tape, &ybar_i, &mut pin_bar, g_pi, &mut work_p);
            for j in 0..r {
                zbar[j] += pin_bar[j];
            }
        };

        add_readout(steps - 1, &mut zbar, g_pi);
        for i in (0..steps - 1).rev() {
            // z_{i+1} = z_i + ½Δt(k₁ + k₂)
            for j in 0..n {
                k1bar[j] = half * zbar[j];
                k2bar[j] = half * zbar[j];
                ztbar[j] = T::zero();
            }

            // k₂ = [zt₂; Γ(zt₁, zt₂, u_{i+1})]
            for j in 0..r {
                ztbar[r + j] += k2bar[j];
            }
            let tape = &record.gamma_tapes[(2 * i + 1) * glen..(2 * i + 2) * glen];
            self.gamma.vjp_tape_with(tape, &k2bar[r..], &mut gin_bar, g_gamma, &mut work);
            {
                let (xb, vb) = ztbar.split_at_mut(r);
                self.scatter_gamma_bar(&gin_bar, xb, vb);
            }

            // zt = z_i + Δt·k₁
            for j in 0..n {
                zbar[j] += ztbar[j];
                k1bar[j] += dt * ztbar[j];
            }

            // k₁ = [z₂; Γ(z₁, z₂, u_i)]
            for j in 0..r {
                zbar[r + j] += k1bar[j];
            }
            let tape = &record.gamma_tapes[2 * i * glen..(2 * i + 1) * glen];
            self.gamma.vjp_tape_with(tape, &k1bar[r..], &mut gin_bar, g_gamma, &mut work);
            {
                let (xb, vb) = zbar.split_at_mut(r);
                self.scatter_gamma_bar(&gin_bar, xb, vb);
            }

            add_readout(i, &mut zbar, g_pi);
        }
        Ok(())
    }
}

/// Outcome of an empirical bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub max_observed: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Ingredients of the state bound `T·[p·B_K·L + w_out·B_b·(w·B_W + 1)]·e^{T(L+1)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBoundTerms {
    pub horizon: f64,
    pub p: usize,
    pub input_bound: f64,
    pub lipschitz: f64,
    pub w_out: usize,
    pub w_hidden: usize,
    pub weight_bound: f64,
    pub bias_bound: f64,
}

impl StateBoundTerms {
    pub fn value(&self) -> f64 {
        let t = self.horizon;
        let forcing = self.p as f64 * self.input_bound * self.lipschitz
            + self.w_out as f64 * self.bias_bound * (self.w_hidden as f64 * self.weight_bound + 1.0);
        t * forcing * (t * (self.lipschitz + 1.0)).exp()
    }
}

impl<T: Scalar> OscillatorModel<T> {
    /// Bound terms for this model's Γ with realized weight magnitudes.
    pub fn state_bound_terms(&self, horizon: f64, input_bound: f64) -> StateBoundTerms {
        StateBoundTerms {
            horizon,
            p: self.dims.p,
            input_bound,
            lipschitz: self.gamma.lipschitz().network.as_f64(),
            w_out: self.gamma.output_dim(),
            w_hidden: self.gamma.max_hidden_width(),
            weight_bound: self.gamma.max_abs_weight().as_f64(),
            bias_bound: self.gamma.max_abs_bias().as_f64(),
        }
    }

    /// Checks `max_t (|x(t)|₁ + |x'(t)|₁)` over every input against the
    /// Gronwall-type state bound. Inputs must be bounded by `input_bound`
    /// channel-wise.
    pub fn verify_state_bound(&self, u_set: &[Trajectory<T>], input_bound: f64) -> Result<BoundReport> {
        if u_set.is_empty() {
            return Err(Error::invalid("state bound check needs at least one input"));
        }
        let mut max_observed = 0.0f64;
        let mut horizon = 0.0f64;
        for u in u_set {
            let peak = u.values().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
            if peak > input_bound {
                return Err(Error::invalid(format!(
                    "input exceeds the stated bound: {peak} > {input_bound}"
                )));
            }
            let (_, rec) = self.rollout(u)?;
            for i in 0..rec.steps() {
                let s: f64 = rec.state(i).iter().map(|v| v.as_f64().abs()).sum();
                max_observed = max_observed.max(s);
            }
            horizon = horizon.max(u.span().as_f64());
        }
        let bound = self.state_bound_terms(horizon, input_bound).value();
        Ok(BoundReport {
            max_observed,
            bound,
            satisfied: max_observed <= bound,
        })
    }
}

// --- checkpoint --------------------------------------------------------------

const OSC_MAGIC: &[u8; 4] = b"NOSC";
pub const OSC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorHeader {
    pub format_version: u32,
    pub dims: Dims,
    pub gamma_inputs: GammaInputs,
    /// Free-form metadata (e.g. I/O scaling used during training).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl<T: Scalar> OscillatorModel<T> {
    /// `"NOSC"`, header length (u64 LE), JSON header, then the Γ and Π
    /// network checkpoints back to back.
    pub fn write_checkpoint<W: Write>(
        &self,
        mut w: W,
        seed_lineage: &[u64],
        meta: serde_json::Value,
    ) -> Result<()> {
        let header = OscillatorHeader {
            format_version: OSC_FORMAT_VERSION,
            dims: self.dims,
            gamma_inputs: self.gamma_inputs,
            meta,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(OSC_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        self.gamma.write_checkpoint(&mut w, seed_lineage)?;
        self.pi.write_checkpoint(&mut w, seed_lineage)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Self, OscillatorHeader)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != OSC_MAGIC {
            return Err(Error::Format("not an oscillator checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: OscillatorHeader = serde_json::from_slice(&json)?;
        if header.format_version != OSC_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported oscillator format version {}",
                header.format_version
            )));
        }
        let (gamma, _) = MlpParams::read_checkpoint(&mut r)?;
        let (pi, _) = MlpParams::read_checkpoint(&mut r)?;
        let model = Self::new(gamma, pi, header.dims, header.gamma_inputs)?;
        Ok((model, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::DenseLayer;

    /// Γ(x, x', u) = u − x with x = ReLU(x) − ReLU(−x); Π reads out x.
    fn linear_oscillator() -> OscillatorModel<f64> {
        let dims = Dims { p: 1, q: 1, r: 1 };
        let w1 = vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, -1.0],
        ];
        let gamma = MlpParams::new(
            vec![
                DenseLayer::from_rows(&w1, vec![0.0; 4]).unwrap(),
                DenseLayer::from_rows(&[vec![-1.0, 1.0, 1.0, -1.0]], vec![0.0]).unwrap(),
            ],
            Activation::Relu,
        )
        .unwrap();
        let pi = MlpParams::new(
            vec![DenseLayer::from_rows(&[vec![1.0, 0.0, 0.0]], vec![0.0]).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        OscillatorModel::new(gamma, pi, dims, GammaInputs::default()).unwrap()
    }

    #[test]
    fn zero_forcing_stays_at_rest() {
        let m = linear_oscillator();
        let u = Trajectory::zeros(0.01, 0.0, 1, 200).unwrap();
        let (y, rec) = m.rollout(&u).unwrap();
        assert!(y.values().iter().all(|v| *v == 0.0));
        assert!(rec.state(199).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_forcing_matches_closed_form() {
        // x'' = 1 − x, x(0) = x'(0) = 0  ⇒  x(t) = 1 − cos t.
        let m = linear_oscillator();
        let u = Trajectory::from_fn(0.001, 0.0, 1, 1001, |_, _| 1.0).unwrap();
        let y = m.predict(&u).unwrap();
        let err = (y.get(0, 1000) - (1.0 - 1.0f64.cos())).abs();
        assert!(err < 1e-5, "err = {err:e}");
    }

    #[test]
    fn output_emitted_at_t0_with_time_feature() {
        // Π reads only the time feature.
        let mut m = linear_oscillator();
        m.pi = MlpParams::new(
            vec![DenseLayer::from_rows(&[vec![0.0, 0.0, 2.0]], vec![0.5]).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        let u = Trajectory::zeros(0.25, 0.0, 1, 5).unwrap();
        let y = m.predict(&u).unwrap();
        assert_eq!(y.channel(0), &[0.5, 1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn shape_errors() {
        let m = linear_oscillator();
        let u2 = Trajectory::zeros(0.1, 0.0, 2, 10).unwrap();
        assert!(m.rollout(&u2).is_err());
        let u = Trajectory::zeros(0.1, 0.0, 1, 10).unwrap();
        let (_, rec) = m.rollout(&u).unwrap();
        let u_short = Trajectory::zeros(0.1, 0.0, 1, 9).unwrap();
        let ybar = Trajectory::zeros(0.1, 0.0, 1, 9).unwrap();
        assert!(m.rollout_vjp(&u_short, &rec, &ybar).is_err());
        let bad_gamma = MlpParams::<f64>::zeros(&[2, 4, 1], Activation::Relu).unwrap();
        assert!(OscillatorModel::new(bad_gamma, m.pi.clone(), m.dims(), GammaInputs::default()).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let dims = Dims { p: 1, q: 1, r: 1 };
        let mut m = OscillatorModel::<f64>::init(1, dims, &[4], &[4], Activation::Relu, GammaInputs::default())
            .unwrap();
        // Γ = 1e200·x' + 1e200: explodes within a few steps.
        for layer in m.gamma.layers_mut() {
            layer.weight.iter_mut().for_each(|w| *w = 1e200);
            layer.bias.iter_mut().for_each(|b| *b = 1e200);
        }
        let u = Trajectory::zeros(0.1, 0.0, 1, 50).unwrap();
        match m.rollout(&u) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1 && step < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn state_bound_substitution() {
        let terms = StateBoundTerms {
            horizon: 1.0,
            p: 1,
            input_bound: 1.0,
            lipschitz: 2.0,
            w_out: 2,
            w_hidden: 4,
            weight_bound: 0.5,
            bias_bound: 0.5,
        };
        let expected = 5.0 * 3f64.exp();
        assert!((terms.value() - expected).abs() < 1e-12 * expected);
        assert!((terms.value() - 100.43).abs() < 0.01);
    }

    #[test]
    fn gamma_input_override() {
        let dims = Dims { p: 1, q: 1, r: 10 };
        let skip_velocity = GammaInputs {
            position: true,
            velocity: false,
            input: true,
        };
        assert_eq!(skip_velocity.width(dims), 11);
        let m = OscillatorModel::<f64>::init(4, dims, &[20], &[15, 15], Activation::prelu_default(), skip_velocity)
            .unwrap();
        assert_eq!(m.gamma.layout(), vec![11, 20, 10]);
        assert_eq!(m.pi.layout(), vec![12, 15, 15, 1]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dims = Dims { p: 1, q: 2, r: 3 };
        let m = OscillatorModel::<f64>::init(8, dims, &[7], &[5], Activation::prelu_default(), GammaInputs::default())
            .unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf, &[8], serde_json::json!({"input_scale": 0.5}))
            .unwrap();
        let (back, header) = OscillatorModel::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.meta["input_scale"], 0.5);
    }
}
