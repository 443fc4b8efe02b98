//! Binary checkpoints of a field and its optimizer.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic  b"CFLD"            version u32
//! layers u32  hidden u32  color_hidden u32
//! freq_position u32  freq_direction u32  activation u8 (0 relu, 1 softplus)
//! iteration u64  adam_step u64
//! block_count u32, then per block: path_len u32, path utf-8, rows u32, cols u32
//! param_count u64, then params, adam m, adam v as f64
//! ```
//!
//! Values are always stored as f64, whatever the training scalar.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::field::{Activation, FieldConfig, FieldParams};
use crate::optim::AdamState;
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"CFLD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: FieldParams<T>,
    pub adam: AdamState<T>,
    pub iteration: u64,
}

fn u32_of(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))
}

impl<T: Real> Checkpoint<T> {
    pub fn write(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let cfg = self.params.config();
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [cfg.layers, cfg.hidden, cfg.color_hidden, cfg.freq_position, cfg.freq_direction] {
            w.write_all(&u32_of(v)?.to_le_bytes())?;
        }
        w.write_all(&[match cfg.activation {
            Activation::Relu => 0,
            Activation::Softplus => 1,
        }])?;
        w.write_all(&self.iteration.to_le_bytes())?;
        w.write_all(&self.adam.step.to_le_bytes())?;
        let layout = self.params.layout();
        w.write_all(&u32_of(layout.len())?.to_le_bytes())?;
        for b in layout {
            w.write_all(&u32_of(b.path.len())?.to_le_bytes())?;
            w.write_all(b.path.as_bytes())?;
            w.write_all(&u32_of(b.rows)?.to_le_bytes())?;
            w.write_all(&u32_of(b.cols)?.to_le_bytes())?;
        }
        let flat = self.params.flat();
        w.write_all(&(flat.len() as u64).to_le_bytes())?;
        for x in flat.iter().chain(&self.adam.m).chain(&self.adam.v) {
            w.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = match act[0] {
            0 => Activation::Relu,
            1 => Activation::Softplus,
            a => return Err(CheckpointError::Corrupt(format!("activation tag {a}"))),
        };
        let config = FieldConfig {
            layers: dims[0],
            hidden: dims[1],
            color_hidden: dims[2],
            freq_position: dims[3],
            freq_direction: dims[4],
            activation,
        };
        config.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let iteration = read_u64(&mut r)?;
        let step = read_u64(&mut r)?;

        let expected = config.layout();
        let count = read_u32(&mut r)? as usize;
        if count != expected.len() {
            return Err(CheckpointError::Corrupt(format!("{count} blocks, expected {}", expected.len())));
        }
        for b in &expected {
            let len = read_u32(&mut r)? as usize;
            if len > 256 {
                return Err(CheckpointError::Corrupt("block name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let (rows, cols) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
            if name != b.path.as_bytes() || (rows, cols) != (b.rows, b.cols) {
                return Err(CheckpointError::Corrupt(format!(
                    "block {} is {}x{}, expected {} {}x{}",
                    String::from_utf8_lossy(&name),
                    rows,
                    cols,
                    b.path,
                    b.rows,
                    b.cols
                )));
            }
        }
        let n = read_u64(&mut r)? as usize;
        if n != config.num_params() {
            return Err(CheckpointError::Corrupt(format!("{n} parameters, expected {}", config.num_params())));
        }
        let mut read_vec = || -> Result<Vec<T>, CheckpointError> {
            (0..n).map(|_| Ok(T::lit(f64::from_le_bytes(read_array(&mut r)?)))).collect()
        };
        let flat = read_vec()?;
        let m = read_vec()?;
        let v = read_vec()?;
        let params = FieldParams::from_flat(config, flat).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(Self { params, adam: AdamState { m, v, step }, iteration })
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    read_array(r).map(u64::from_le_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let cfg = FieldConfig { layers: 2, hidden: 8, color_hidden: 4, ..Default::default() };
        let params = FieldParams::<f64>::init(cfg, 3).unwrap();
        let n = params.flat().len();
        let adam = AdamState { m: (0..n).map(|i| i as f64 * 1e-3).collect(), v: vec![0.25; n], step: 17 };
        Checkpoint { params, adam, iteration: 17 }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CFLD");
        let back = Checkpoint::<f64>::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn f32_checkpoint_reads_as_f64() {
        let ck = sample();
        let single = Checkpoint { params: ck.params.cast::<f32>(), adam: AdamState::new(ck.adam.m.len()), iteration: 1 };
        let mut buf = Vec::new();
        single.write(&mut buf).unwrap();
        let back = Checkpoint::<f64>::read(buf.as_slice()).unwrap();
        let want: Vec<f64> = single.params.flat().iter().map(|&x| x as f64).collect();
        assert_eq!(back.params.flat(), want.as_slice());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Checkpoint::<f64>::read(&b"NOPE\x01\0\0\0"[..]), Err(CheckpointError::Magic)));
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(Checkpoint::<f64>::read(buf.as_slice()), Err(CheckpointError::Version(9))));
        buf[4] = 1;
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::<f64>::read(buf.as_slice()), Err(CheckpointError::Io(_))));
    }
}
