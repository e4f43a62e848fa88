//! Binary training checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `SFLOWCKP` |
//! | version | `u32` |
//! | config echo | `u32` length + UTF-8 TOML |
//! | step | `u64` |
//! | RNG | 32-byte seed, `u64` stream, `u128` word position |
//! | parameters | `u32` count, then per tensor: `u32` name length, name, `u32` rank, `u64` dims, `f64` values |
//! | Adam | `u64` step, then per tensor `f64` first and second moments |

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamRegistry};

pub const MAGIC: [u8; 8] = *b"SFLOWCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<NamedTensor>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, step: u64, params: &ParamRegistry, adam: &Adam, rng: &ChaCha8Rng) -> Self {
        Checkpoint {
            config: config.clone(),
            step,
            rng: RngState::capture(rng),
            params: params
                .iter()
                .map(|(n, t)| NamedTensor {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.to_vec(),
                })
                .collect(),
            adam: AdamState {
                step: adam.step,
                m: adam.m.clone(),
                v: adam.v.clone(),
            },
        }
    }

    /// Copies parameter values and optimizer moments into live objects,
    /// checking names and shapes.
    pub fn restore(&self, params: &ParamRegistry, adam: &mut Adam) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Mismatch {
                field: "parameter count",
                config: params.len().to_string(),
                checkpoint: self.params.len().to_string(),
            });
        }
        for ((name, t), saved) in params.iter().zip(&self.params) {
            if name != saved.name || t.shape() != saved.shape.as_slice() {
                return Err(Error::Mismatch {
                    field: "parameter",
                    config: format!("{name} {:?}", t.shape()),
                    checkpoint: format!("{} {:?}", saved.name, saved.shape),
                });
            }
        }
        for ((_, t), saved) in params.iter().zip(&self.params) {
            t.set_data(saved.values.clone())?;
        }
        adam.step = self.adam.step;
        adam.m = self.adam.m.clone();
        adam.v = self.adam.v.clone();
        Ok(())
    }

    pub fn write(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let cfg = self.config.to_toml();
        write_u32(w, cfg.len())?;
        w.write_all(cfg.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        write_u32(w, self.params.len())?;
        for p in &self.params {
            write_u32(w, p.name.len())?;
            w.write_all(p.name.as_bytes())?;
            write_u32(w, p.shape.len())?;
            for &d in &p.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            write_f64s(w, &p.values)?;
        }
        w.write_all(&self.adam.step.to_le_bytes())?;
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            write_f64s(w, m)?;
            write_f64s(w, v)?;
        }
        Ok(())
    }

    pub fn read(r: &mut dyn Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let cfg_len = read_u32(r)? as usize;
        let src = String::from_utf8(read_bytes(r, cfg_len)?)
            .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
        let config = RunConfig::parse(&src).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
        let step = read_u64(r)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed).map_err(truncated)?;
        let stream = read_u64(r)?;
        let mut wp = [0u8; 16];
        r.read_exact(&mut wp).map_err(truncated)?;
        let rng = RngState {
            seed,
            stream,
            word_pos: u128::from_le_bytes(wp),
        };
        let n = read_u32(r)? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let values = read_f64s(r, shape.iter().product())?;
            params.push(NamedTensor { name, shape, values });
        }
        let adam_step = read_u64(r)?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for p in &params {
            m.push(read_f64s(r, p.values.len())?);
            v.push(read_f64s(r, p.values.len())?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            config,
            step,
            rng,
            params,
            adam: AdamState { step: adam_step, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_u32(w: &mut dyn Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint("field too large".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut dyn Write, v: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_bytes(r: &mut dyn Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    Ok(buf)
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut dyn Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut dyn Read, n: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(r, n * 8)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[cfg(test)]
mod tests {
    use rand::{RngCore, SeedableRng};

    use super::*;
    use crate::estimators::Estimator;
    use crate::flow::{Flow, FlowModel};
    use crate::tensor::DType;

    fn sample() -> (Checkpoint, FlowModel) {
        let mut cfg = RunConfig::new(4, 2.0, 0.276, Estimator::Rt);
        cfg.n_layers = 2;
        cfg.hidden_channels = 2;
        cfg.knots = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FlowModel::new(cfg.shape(), DType::Single, &mut rng).unwrap();
        let mut adam = Adam::new(cfg.adam(), model.parameters());
        adam.step = 5;
        adam.m[0][0] = 0.25;
        rng.next_u64();
        (Checkpoint::capture(&cfg, 17, model.parameters(), &adam, &rng), model)
    }

    #[test]
    fn byte_identical_round_trip() {
        let (ck, _) = sample();
        let mut a = Vec::new();
        ck.write(&mut a).unwrap();
        let back = Checkpoint::read(&mut a.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(4);
        rng.next_u32();
        let mut copy = RngState::capture(&rng).restore();
        assert_eq!(rng.next_u64(), copy.next_u64());
    }

    #[test]
    fn version_and_corruption() {
        let (ck, _) = sample();
        let mut a = Vec::new();
        ck.write(&mut a).unwrap();
        let mut v = a.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::read(&mut v.as_slice()), Err(Error::Version { found: 9, .. })));
        let mut m = a.clone();
        m[0] = b'X';
        assert!(matches!(Checkpoint::read(&mut m.as_slice()), Err(Error::Checkpoint(_))));
        let t = &a[..a.len() - 3];
        assert!(matches!(Checkpoint::read(&mut &t[..]), Err(Error::Checkpoint(_))));
        let mut extra = a.clone();
        extra.push(0);
        assert!(Checkpoint::read(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let (ck, model) = sample();
        let mut adam = Adam::new(ck.config.adam(), model.parameters());
        ck.restore(model.parameters(), &mut adam).unwrap();
        assert_eq!(adam.step, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut shape = ck.config.shape();
        shape.hidden = 3;
        let other = FlowModel::new(shape, DType::Single, &mut rng).unwrap();
        let mut adam2 = Adam::new(ck.config.adam(), other.parameters());
        assert!(matches!(ck.restore(other.parameters(), &mut adam2), Err(Error::Mismatch { .. })));
    }
}
