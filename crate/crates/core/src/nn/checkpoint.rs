//! Parameter checkpoints.
//!
//! ```text
//! magic        [u8; 4]  "TMNW"
//! version      u16      1
//! layer_count  u32      number of layers in the network spec
//! per layer:
//!   has_params u8       0 or 1
//!   if 1, weight then bias, each:
//!     ndim     u8
//!     dims     [u32; ndim]
//!     values   [f32; Π dims]
//! ```
//!
//! All fields are little-endian. Optimizer state is not stored.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::LayerParams;
use super::{NnError, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TMNW";
const VERSION: u16 = 1;

fn write_tensor(out: &mut impl Write, t: &Tensor) -> io::Result<()> {
    out.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(out: &mut impl Write, layers: &[Option<LayerParams>]) -> Result<(), NnError> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        match layer {
            None => out.write_all(&[0])?,
            Some(p) => {
                out.write_all(&[1])?;
                write_tensor(out, &p.weight)?;
                write_tensor(out, &p.bias)?;
            }
        }
    }
    Ok(())
}

pub fn write_checkpoint_file(path: &Path, layers: &[Option<LayerParams>]) -> Result<(), NnError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, layers)?;
    out.flush()?;
    Ok(())
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<(), NnError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NnError::Truncated,
        _ => NnError::Io(e),
    })
}

fn read_u8(input: &mut impl Read) -> Result<u8, NnError> {
    let mut b = [0u8; 1];
    read_exact(input, &mut b)?;
    Ok(b[0])
}

fn read_u32(input: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor(input: &mut impl Read) -> Result<Tensor, NnError> {
    let ndim = read_u8(input)? as usize;
    if ndim == 0 {
        return Err(NnError::Format("zero-dimensional tensor".into()));
    }
    let shape = (0..ndim)
        .map(|_| read_u32(input).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&l| l > 0 && l <= (1 << 31))
        .ok_or_else(|| NnError::Format(format!("implausible tensor shape {shape:?}")))?;
    let mut bytes = vec![0u8; len * 4];
    read_exact(input, &mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Vec<Option<LayerParams>>, NnError> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 2];
    read_exact(input, &mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(input)?;
    (0..count)
        .map(|_| match read_u8(input)? {
            0 => Ok(None),
            1 => {
                let weight = read_tensor(input)?;
                let bias = read_tensor(input)?;
                Ok(Some(LayerParams { weight, bias }))
            }
            flag => Err(NnError::Format(format!("bad layer flag {flag}"))),
        })
        .collect()
}

pub fn read_checkpoint_file(path: &Path) -> Result<Vec<Option<LayerParams>>, NnError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
