use crate::error::{Error, Result};
use crate::Scalar;

/// Multichannel signal on a uniform time grid.
///
/// `values` is channel-major: channel `c` occupies
/// `values[c * steps .. (c + 1) * steps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub t0: T,
    channels: usize,
    steps: usize,
    values: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(dt: T, t0: T, channels: usize, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(Error::invalid(format!(
                "{} samples do not split into {channels} nonempty channels",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "trajectory samples".into(),
            });
        }
        let steps = values.len() / channels;
        Ok(Self {
            dt,
            t0,
            channels,
            steps,
            values,
        })
    }

    pub fn single(dt: T, t0: T, values: Vec<T>) -> Result<Self> {
        Self::new(dt, t0, 1, values)
    }

    pub fn zeros(dt: T, t0: T, channels: usize, steps: usize) -> Result<Self> {
        Self::new(dt, t0, channels, vec![T::zero(); channels * steps])
    }

    /// Samples `f(t)` per channel on the grid `t0 + i·dt`, `i < steps`.
    pub fn from_fn(
        dt: T,
        t0: T,
        channels: usize,
        steps: usize,
        mut f: impl FnMut(usize, T) -> T,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * steps);
        for c in 0..channels {
            for i in 0..steps {
                values.push(f(c, t0 + dt * T::from_usize_lossy(i)));
            }
        }
        Self::new(dt, t0, channels, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(i)
    }

    /// Horizon `t_last − t0`.
    pub fn span(&self) -> T {
        self.dt * T::from_usize_lossy(self.steps - 1)
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.values[c * self.steps..(c + 1) * self.steps]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.values[c * self.steps..(c + 1) * self.steps]
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize) -> T {
        self.values[c * self.steps + i]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, v: T) {
        self.values[c * self.steps + i] = v;
    }

    /// All channels at grid point `i`, written into `out`.
    pub fn sample_into(&self, i: usize, out: &mut [T]) {
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.values[c * self.steps + i];
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Linear interpolation of channel `c` at absolute time `t`; clamps
    /// outside the grid.
    pub fn interpolate(&self, c: usize, t: T) -> T {
        let ch = self.channel(c);
        let s = (t - self.t0) / self.dt;
        if s <= T::zero() {
            return ch[0];
        }
        let last = self.steps - 1;
        let i = s.floor().to_usize().unwrap_or(last);
        if i >= last {
            return ch[last];
        }
        let frac = s - T::from_usize_lossy(i);
        ch[i] + (ch[i + 1] - ch[i]) * frac
    }

    /// Keeps the selected channels, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&c| c >= self.channels) {
            return Err(Error::dim("channel index", self.channels, bad));
        }
        let values = idx.iter().flat_map(|&c| self.channel(c).iter().copied()).collect();
        Self::new(self.dt, self.t0, idx.len(), values)
    }

    /// First `steps` grid points.
    pub fn truncate(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps {
            return Err(Error::invalid(format!(
                "cannot truncate {} steps to {steps}",
                self.steps
            )));
        }
        let values = (0..self.channels)
            .flat_map(|c| self.channel(c)[..steps].iter().copied())
            .collect();
        Self::new(self.dt, self.t0, self.channels, values)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.dt, self.t0, self.channels, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Trajectory<U> {
        Trajectory {
            dt: U::lit(self.dt.as_f64()),
            t0: U::lit(self.t0.as_f64()),
            channels: self.channels,
            steps: self.steps,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.steps == other.steps && self.dt == other.dt && self.t0 == other.t0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_interpolation() {
        let t = Trajectory::new(0.5, 0.0, 2, vec![0.0, 1.0, 2.0, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(t.steps(), 3);
        assert_eq!(t.channel(1), &[10.0, 20.0, 30.0]);
        assert_eq!(t.interpolate(0, 0.25), 0.5);
        assert_eq!(t.interpolate(1, 0.75), 25.0);
        assert_eq!(t.interpolate(1, 9.0), 30.0);
        assert_eq!(t.span(), 1.0);
        assert_eq!(t.truncate(2).unwrap().channel(1), &[10.0, 20.0]);
        assert_eq!(t.select_channels(&[1]).unwrap().values(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Trajectory::new(0.0, 0.0, 1, vec![1.0]).is_err());
        assert!(Trajectory::new(0.1, 0.0, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Trajectory::new(0.1, 0.0, 1, vec![f64::NAN]).is_err());
        assert!(Trajectory::<f64>::new(0.1, 0.0, 1, vec![]).is_err());
    }
}
