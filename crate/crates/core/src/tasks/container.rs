//! Binary dataset files.
//!
//! ```text
//! magic    8 bytes  "CBMDATA\0"
//! version  u32 LE   1
//! task     u8       0 = moving shapes, 1 = cat & dog
//! count    u64 LE   number of sequences
//! frame    3 × u64  channels, height, width
//! then per sequence:
//!   len    u64 LE   number of frames
//!   labels f64 LE   1 value (class) or `len` values (per-frame)
//!   frames f64 LE   len · channels · height · width values
//! ```

use std::io::{self, Read, Write};

use super::{Task, TaskError};
use crate::scalar::Scalar;
use crate::scheme::{Sequence, Target};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"CBMDATA\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub task: Task,
    /// `[channels, height, width]`.
    pub frame_shape: [usize; 3],
    pub sequences: Vec<Sequence<T>>,
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> TaskError {
    TaskError::Format(msg.into())
}

impl<T: Scalar> Dataset<T> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TaskError> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&[self.task as u8])?;
        w.write_all(&(self.sequences.len() as u64).to_le_bytes())?;
        for d in self.frame_shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let frame_len: usize = self.frame_shape.iter().product();
        for (i, seq) in self.sequences.iter().enumerate() {
            w.write_all(&(seq.len() as u64).to_le_bytes())?;
            match (&seq.target, self.task) {
                (Target::Class(c), Task::MovingShapes) => w.write_all(&(*c as f64).to_le_bytes())?,
                (Target::PerFrame(l), Task::CatDog) if l.len() == seq.len() => {
                    for &v in l {
                        w.write_all(&(v as f64).to_le_bytes())?;
                    }
                }
                _ => return Err(TaskError::WrongTarget(i)),
            }
            for f in &seq.frames {
                if f.len() != frame_len {
                    return Err(bad(format!("sequence {i} has a frame of shape {:?}", f.shape())));
                }
                for v in f.data() {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TaskError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(bad("not a dataset file (bad magic)"));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != DATASET_VERSION {
            return Err(bad(format!("unsupported dataset version {version}")));
        }
        let mut t = [0u8; 1];
        r.read_exact(&mut t)?;
        let task = match t[0] {
            0 => Task::MovingShapes,
            1 => Task::CatDog,
            other => return Err(bad(format!("unknown task tag {other}"))),
        };
        let count = read_u64(r)? as usize;
        let frame_shape = [read_u64(r)? as usize, read_u64(r)? as usize, read_u64(r)? as usize];
        let frame_len: usize = frame_shape.iter().product();
        let mut sequences = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u64(r)? as usize;
            let target = match task {
                Task::MovingShapes => Target::Class(read_f64(r)? as usize),
                Task::CatDog => Target::PerFrame((0..len).map(|_| read_f64(r).map(|x| x as i64)).collect::<io::Result<_>>()?),
            };
            let frames = (0..len)
                .map(|_| {
                    let data = (0..frame_len).map(|_| read_f64(r).map(T::of)).collect::<io::Result<Vec<T>>>()?;
                    Ok(Tensor::new(frame_shape.to_vec(), data).expect("frame length"))
                })
                .collect::<Result<Vec<_>, TaskError>>()?;
            sequences.push(Sequence { frames, target });
        }
        Ok(Self {
            task,
            frame_shape,
            sequences,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{gen_catdog, CatDogConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CatDogConfig { seq_len: 6, max_gap: 4, height: 3, width: 2, noise: 0.1 };
        let seqs: Vec<Sequence<f64>> = gen_catdog(3, &cfg, &mut rng).unwrap().into_iter().map(|s| s.into_sequence()).collect();
        let ds = Dataset {
            task: Task::CatDog,
            frame_shape: [1, 3, 2],
            sequences: seqs,
        };
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], DATASET_MAGIC);
        assert_eq!(buf[12], 1);
        assert_eq!(buf.len(), 8 + 4 + 1 + 8 + 24 + 3 * (8 + 6 * 8 + 6 * 6 * 8));
        let back = Dataset::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);

        buf[8] = 9;
        assert!(Dataset::<f64>::read_from(&mut buf.as_slice()).is_err());
    }
}
