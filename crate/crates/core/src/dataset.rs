//! Binary dataset container.
//!
//! Layout: magic `NODS`, `u32` LE version, `u64` LE header length, UTF-8 JSON
//! header, then little-endian `f64` payload: inputs row-major `[N × steps]`
//! followed by targets row-major `[N × q × steps]`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::training::Sample;

pub const DATASET_MAGIC: &[u8; 4] = b"NODS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Response,
    Extreme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    /// Identifies the generating system, e.g. `bouc_wen_5dof`.
    pub system: String,
    pub p: usize,
    pub q: usize,
    pub dt: f64,
    /// Horizon `dt·(steps − 1)`.
    pub horizon: f64,
    pub steps: usize,
    pub n: usize,
    pub master_seed: u64,
    pub target_kind: TargetKind,
    /// Structural output channels the targets were taken from.
    pub channels: Vec<usize>,
    /// Free-form provenance (generator configuration).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// `[N × steps]`.
    pub inputs: Vec<f64>,
    /// `[N × q × steps]`.
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.p != 1 {
            return Err(Error::invalid(format!("datasets store one input channel, header says p = {}", h.p)));
        }
        if h.n == 0 || h.steps < 2 || h.q == 0 {
            return Err(Error::invalid("dataset needs N ≥ 1, q ≥ 1 and at least two steps"));
        }
        if self.inputs.len() != h.n * h.steps {
            return Err(Error::dim("dataset inputs", h.n * h.steps, self.inputs.len()));
        }
        if self.targets.len() != h.n * h.q * h.steps {
            return Err(Error::dim("dataset targets", h.n * h.q * h.steps, self.targets.len()));
        }
        if !(h.dt > 0.0) || (h.dt * (h.steps - 1) as f64 - h.horizon).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "dt·(steps − 1) = {} does not match the horizon {}",
                h.dt * (h.steps - 1) as f64,
                h.horizon
            )));
        }
        if h.channels.len() != h.q {
            return Err(Error::dim("target channel list", h.q, h.channels.len()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.header.n
    }

    pub fn is_empty(&self) -> bool {
        self.header.n == 0
    }

    pub fn input(&self, l: usize) -> Result<Trajectory<f64>> {
        let s = self.header.steps;
        Trajectory::single(self.header.dt, 0.0, self.inputs[l * s..(l + 1) * s].to_vec())
    }

    pub fn target(&self, l: usize) -> Result<Trajectory<f64>> {
        let (s, q) = (self.header.steps, self.header.q);
        Trajectory::new(self.header.dt, 0.0, q, self.targets[l * q * s..(l + 1) * q * s].to_vec())
    }

    pub fn sample(&self, l: usize) -> Result<Sample<f64>> {
        Sample::new(self.input(l)?, self.target(l)?)
    }

    /// Samples `range` as input/target pairs.
    pub fn samples(&self, range: std::ops::Range<usize>) -> Result<Vec<Sample<f64>>> {
        if range.end > self.len() {
            return Err(Error::invalid(format!("sample range {range:?} exceeds N = {}", self.len())));
        }
        range.map(|l| self.sample(l)).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(8 * (self.inputs.len() + self.targets.len()));
        for v in self.inputs.iter().chain(&self.targets) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        if len > 1 << 30 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: DatasetHeader = serde_json::from_slice(&header)?;
        let n_in = header.n * header.steps;
        let n_out = header.n * header.q * header.steps;
        let inputs = read_f64s(&mut r, n_in)?;
        let targets = read_f64s(&mut r, n_out)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after dataset payload".into()));
        }
        let ds = Self { header, inputs, targets };
        ds.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(ds)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated dataset payload: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset {
            header: DatasetHeader {
                version: DATASET_VERSION,
                system: "test".into(),
                p: 1,
                q: 2,
                dt: 0.5,
                horizon: 1.0,
                steps: 3,
                n: 2,
                master_seed: 9,
                target_kind: TargetKind::Response,
                channels: vec![0, 4],
                meta: serde_json::Value::Null,
            },
            inputs: vec![0.0, 1.5, -2.0, 0.0, 1e-300, f64::MAX],
            targets: (0..12).map(|i| i as f64 * 0.1).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"NODS");
        let back = Dataset::read(&buf[..]).unwrap();
        assert_eq!(back, ds);
        let t = back.target(1).unwrap();
        assert_eq!(t.channels(), 2);
        assert_eq!(t.get(1, 2), 11.0 * 0.1);
    }

    #[test]
    fn rejects_corruption() {
        let ds = small();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Dataset::read(&bad[..]).is_err());
        assert!(Dataset::read(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Dataset::read(&extra[..]).is_err());

        let mut wrong = small();
        wrong.header.horizon = 2.0;
        assert!(wrong.validate().is_err());
    }
}
