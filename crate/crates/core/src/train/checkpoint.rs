//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "MCNETCKP" | version u32 | config snapshot (u32 len, utf-8)
//! epoch u64 | seed u64 | scheduler: lr f64, best f64, bad_epochs u64
//! adam timestep u64 | history (u32 count, 7 fields per row)
//! tensors (u32 count) of: name (u16 len, utf-8) | role u8 | dtype u8
//!                         | rank u8 | dims u64 * rank | raw data
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::optim::Moments;
use super::trainer::{EpochMetrics, Trainer};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"MCNETCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Param => 0,
            Role::Buffer => 1,
            Role::AdamM => 2,
            Role::AdamV => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Role::Param,
            1 => Role::Buffer,
            2 => Role::AdamM,
            3 => Role::AdamV,
            other => return Err(Error::Format(format!("unknown tensor role {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub role: Role,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub epoch: u64,
    pub seed: u64,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: u64,
    pub adam_t: u64,
    pub history: Vec<EpochMetrics>,
    pub records: Vec<Record>,
}

fn record<T: Scalar>(name: String, role: Role, t: &Tensor<T>) -> Record {
    Record {
        name,
        role,
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
        bytes: T::to_le_bytes_vec(t.data()),
    }
}

impl Checkpoint {
    /// Captures everything needed to continue `trainer` bit-exactly.
    pub fn capture<T: Scalar>(trainer: &mut Trainer<T>, config: &str) -> Self {
        let mut records = Vec::new();
        for (name, p) in trainer.model.named_params() {
            records.push(record(name, Role::Param, &p.value));
        }
        for (name, b) in trainer.model.named_buffers() {
            records.push(record(name, Role::Buffer, b));
        }
        for st in trainer.adam.moments() {
            records.push(record(st.name.clone(), Role::AdamM, &st.m));
            records.push(record(st.name.clone(), Role::AdamV, &st.v));
        }
        Self {
            config: config.to_string(),
            epoch: trainer.epoch as u64,
            seed: trainer.config.seed,
            lr: trainer.scheduler.lr,
            best: trainer.scheduler.best,
            bad_epochs: trainer.scheduler.bad_epochs as u64,
            adam_t: trainer.adam.timestep(),
            history: trainer.history.clone(),
            records,
        }
    }

    fn find(&self, name: &str, role: Role) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name && r.role == role)
            .ok_or_else(|| Error::Format(format!("checkpoint has no {role:?} tensor `{name}`")))
    }

    fn tensor<T: Scalar>(&self, name: &str, role: Role, expected: &[usize]) -> Result<Tensor<T>> {
        let r = self.find(name, role)?;
        if r.shape != expected {
            return Err(Error::Shape(format!(
                "tensor `{name}` is {:?} in the checkpoint but {expected:?} in the model",
                r.shape
            )));
        }
        if r.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor `{name}` is stored as {} but the model uses {}",
                r.dtype,
                T::DTYPE
            )));
        }
        Tensor::from_vec(&r.shape, T::from_le_bytes_slice(&r.bytes))
    }

    /// Loads the state into a trainer built from the same configuration.
    pub fn restore<T: Scalar>(&self, trainer: &mut Trainer<T>) -> Result<()> {
        if self.seed != trainer.config.seed {
            return Err(Error::Config(format!(
                "checkpoint seed {} differs from configured seed {}",
                self.seed, trainer.config.seed
            )));
        }
        for (name, p) in trainer.model.named_params() {
            p.value = self.tensor(&name, Role::Param, p.value.shape())?;
            p.zero_grad();
        }
        for (name, b) in trainer.model.named_buffers() {
            *b = self.tensor(&name, Role::Buffer, b.shape())?;
        }
        let mut moments = Vec::new();
        if self.adam_t > 0 {
            for (name, p) in trainer.model.named_params() {
                let shape = p.value.shape().to_vec();
                moments.push(Moments {
                    m: self.tensor(&name, Role::AdamM, &shape)?,
                    v: self.tensor(&name, Role::AdamV, &shape)?,
                    name,
                });
            }
        }
        trainer.adam.restore(self.adam_t, moments);
        trainer.scheduler.lr = self.lr;
        trainer.scheduler.best = self.best;
        trainer.scheduler.bad_epochs = self.bad_epochs as usize;
        trainer.epoch = self.epoch as usize;
        trainer.history = self.history.clone();
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write_into(&mut w).expect("writing to a Vec cannot fail");
        w
    }

    fn write_into(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.config.len() as u32)?;
        w.write_all(self.config.as_bytes())?;
        w.write_u64::<LittleEndian>(self.epoch)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_f64::<LittleEndian>(self.lr)?;
        w.write_f64::<LittleEndian>(self.best)?;
        w.write_u64::<LittleEndian>(self.bad_epochs)?;
        w.write_u64::<LittleEndian>(self.adam_t)?;
        w.write_u32::<LittleEndian>(self.history.len() as u32)?;
        for m in &self.history {
            w.write_u64::<LittleEndian>(m.epoch as u64)?;
            for v in [
                m.train_loss,
                m.train_accuracy,
                m.test_loss.unwrap_or(f64::NAN),
                m.test_accuracy.unwrap_or(f64::NAN),
                m.lr,
                m.seconds,
            ] {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for r in &self.records {
            w.write_u16::<LittleEndian>(r.name.len() as u16)?;
            w.write_all(r.name.as_bytes())?;
            w.write_u8(r.role.code())?;
            w.write_u8(r.dtype.code())?;
            w.write_u8(r.shape.len() as u8)?;
            for &d in &r.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            w.write_all(&r.bytes)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Truncated("checkpoint header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| trunc("version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config = read_string(&mut r, 4, "config snapshot")?;
        let u64f = |r: &mut Cursor<&[u8]>, what: &str| {
            r.read_u64::<LittleEndian>().map_err(|_| trunc(what))
        };
        let f64f = |r: &mut Cursor<&[u8]>, what: &str| {
            r.read_f64::<LittleEndian>().map_err(|_| trunc(what))
        };
        let epoch = u64f(&mut r, "epoch")?;
        let seed = u64f(&mut r, "seed")?;
        let lr = f64f(&mut r, "scheduler")?;
        let best = f64f(&mut r, "scheduler")?;
        let bad_epochs = u64f(&mut r, "scheduler")?;
        let adam_t = u64f(&mut r, "optimizer state")?;
        let rows = r.read_u32::<LittleEndian>().map_err(|_| trunc("history"))?;
        let mut history = Vec::new();
        for _ in 0..rows {
            let e = u64f(&mut r, "history")? as usize;
            let mut v = [0.0; 6];
            for slot in &mut v {
                *slot = f64f(&mut r, "history")?;
            }
            let opt = |x: f64| if x.is_nan() { None } else { Some(x) };
            history.push(EpochMetrics {
                epoch: e,
                train_loss: v[0],
                train_accuracy: v[1],
                test_loss: opt(v[2]),
                test_accuracy: opt(v[3]),
                lr: v[4],
                seconds: v[5],
            });
        }
        let count = r.read_u32::<LittleEndian>().map_err(|_| trunc("tensor table"))?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name = read_string(&mut r, 2, "tensor name")?;
            let what = format!("tensor `{name}`");
            let role = Role::from_code(r.read_u8().map_err(|_| trunc(&what))?)?;
            let code = r.read_u8().map_err(|_| trunc(&what))?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Format(format!("{what}: unknown dtype code {code}")))?;
            let rank = r.read_u8().map_err(|_| trunc(&what))? as usize;
            let shape = (0..rank)
                .map(|_| Ok(u64f(&mut r, &what)? as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(dtype.size(), |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{what}: shape {shape:?} overflows")))?;
            let remaining = bytes.len() - r.position() as usize;
            if len > remaining {
                return Err(Error::Truncated(format!(
                    "{what} needs {len} bytes, {remaining} left"
                )));
            }
            let mut data = vec![0u8; len];
            r.read_exact(&mut data).map_err(|_| trunc(&what))?;
            records.push(Record {
                name,
                role,
                dtype,
                shape,
                bytes: data,
            });
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.position() as usize
            )));
        }
        Ok(Self {
            config,
            epoch,
            seed,
            lr,
            best,
            bad_epochs,
            adam_t,
            history,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn trunc(what: &str) -> Error {
    Error::Truncated(what.to_string())
}

fn read_string(r: &mut Cursor<&[u8]>, width: usize, what: &str) -> Result<String> {
    let len = match width {
        2 => r.read_u16::<LittleEndian>().map(usize::from),
        _ => r.read_u32::<LittleEndian>().map(|v| v as usize),
    }
    .map_err(|_| trunc(what))?;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(trunc(what));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| trunc(what))?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not utf-8")))
}
