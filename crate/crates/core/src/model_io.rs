//! Binary container for trained composition models.
//!
//! Layout (all integers little-endian u64, all floats little-endian f64):
//!
//! ```text
//! magic     8 bytes  "PHRCMP01"
//! variant   length-prefixed UTF-8 string ("add", "mult1", "mult2", "concat", "tensor")
//! dim       u64 (0 for the parameter-free variants)
//! n_blocks  u64
//! blocks    n_blocks x { name: length-prefixed string, ndim: u64,
//!                        dims: ndim x u64, data: prod(dims) x f64 }
//! ```
//!
//! Blocks are written in a fixed order (the scale vector for `mult2`; the
//! POS-pair keys in declaration order for `concat` and `tensor`), so saving
//! the same model twice produces byte-identical files, and a trained model
//! round-trips through save/load without any loss.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use thiserror::Error;

use crate::composition::{
    ComposeError, CompositionModel, ConcatParams, PerKey, PosPairKey, TensorParams,
};

const MAGIC: &[u8; 8] = b"PHRCMP01";

/// Upper bound on length-prefixed strings and block element counts, as a
/// guard against allocating huge buffers for corrupt files.
const MAX_STRING_LEN: u64 = 1 << 16;
const MAX_BLOCK_ELEMS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unknown model variant {0:?}")]
    UnknownVariant(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("expected block {expected:?}, found {found:?}")]
    WrongBlock { expected: String, found: String },
    #[error("invalid parameters in model file: {0}")]
    Model(#[from] ComposeError),
}

/// Saves `model` to `path` in the binary container format.
pub fn save_model(model: &CompositionModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Loads a model previously written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<CompositionModel, ModelIoError> {
    read_model(&mut BufReader::new(File::open(path)?))
}

/// Serializes `model` to an in-memory buffer; equivalent to [`save_model`].
pub fn model_to_bytes(model: &CompositionModel) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Writes the container to an arbitrary writer.
pub fn write_model<W: Write>(model: &CompositionModel, out: &mut W) -> Result<(), ModelIoError> {
    out.write_all(MAGIC)?;
    write_string(out, model.variant_name())?;
    write_u64(out, model.dim().unwrap_or(0) as u64)?;
    match model {
        CompositionModel::Add | CompositionModel::Mult1 => {
            write_u64(out, 0)?;
        }
        CompositionModel::Mult2 { scale } => {
            write_u64(out, 1)?;
            // 1-d arrays can still carry a stride, e.g. a column picked out
            // of a matrix, so copy rather than assume contiguity.
            let data: Vec<f64> = scale.iter().copied().collect();
            write_block(out, "scale", &[scale.len()], &data)?;
        }
        CompositionModel::Concat(params) => {
            write_u64(out, PosPairKey::ALL.len() as u64)?;
            let n = params.dim();
            for key in PosPairKey::ALL {
                let block = params.block(key);
                write_block(
                    out,
                    &key.to_string(),
                    &[n, 2 * n],
                    block.as_slice().expect("blocks are stored in standard layout"),
                )?;
            }
        }
        CompositionModel::Tensor(params) => {
            write_u64(out, PosPairKey::ALL.len() as u64)?;
            let n = params.dim();
            for key in PosPairKey::ALL {
                let block = params.block(key);
                write_block(
                    out,
                    &key.to_string(),
                    &[n, n, n],
                    block.as_slice().expect("blocks are stored in standard layout"),
                )?;
            }
        }
    }
    Ok(())
}

/// Reads a container from an arbitrary reader.
pub fn read_model<R: Read>(input: &mut R) -> Result<CompositionModel, ModelIoError> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| ModelIoError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let variant = read_string(input)?;
    let dim = read_u64(input)? as usize;
    let n_blocks = read_u64(input)?;

    match variant.as_str() {
        "add" | "mult1" => {
            expect_blocks(n_blocks, 0, &variant)?;
            Ok(if variant == "add" {
                CompositionModel::Add
            } else {
                CompositionModel::Mult1
            })
        }
        "mult2" => {
            expect_blocks(n_blocks, 1, &variant)?;
            let (name, dims, data) = read_block(input)?;
            if name != "scale" {
                return Err(ModelIoError::WrongBlock {
                    expected: "scale".to_string(),
                    found: name,
                });
            }
            if dims != [dim] {
                return Err(ModelIoError::Malformed(format!(
                    "scale block has dims {dims:?}, expected [{dim}]"
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ModelIoError::Malformed(
                    "scale block contains a non-finite value".to_string(),
                ));
            }
            Ok(CompositionModel::Mult2 {
                scale: Array1::from_vec(data),
            })
        }
        "concat" => {
            expect_blocks(n_blocks, PosPairKey::ALL.len() as u64, &variant)?;
            let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(PosPairKey::ALL.len());
            for key in PosPairKey::ALL {
                let (name, dims, data) = read_block(input)?;
                if name != key.to_string() {
                    return Err(ModelIoError::WrongBlock {
                        expected: key.to_string(),
                        found: name,
                    });
                }
                if dims != [dim, 2 * dim] {
                    return Err(ModelIoError::Malformed(format!(
                        "block {key} has dims {dims:?}, expected [{dim}, {}]",
                        2 * dim
                    )));
                }
                let array = Array2::from_shape_vec((dim, 2 * dim), data)
                    .map_err(|e| ModelIoError::Malformed(e.to_string()))?;
                blocks.push(array);
            }
            let mut iter = blocks.into_iter();
            let per_key = PerKey::from_fn(|_| iter.next().expect("six blocks were read"));
            Ok(CompositionModel::Concat(ConcatParams::new(per_key)?))
        }
        "tensor" => {
            expect_blocks(n_blocks, PosPairKey::ALL.len() as u64, &variant)?;
            let mut blocks: Vec<Array3<f64>> = Vec::with_capacity(PosPairKey::ALL.len());
            for key in PosPairKey::ALL {
                let (name, dims, data) = read_block(input)?;
                if name != key.to_string() {
                    return Err(ModelIoError::WrongBlock {
                        expected: key.to_string(),
                        found: name,
                    });
                }
                if dims != [dim, dim, dim] {
                    return Err(ModelIoError::Malformed(format!(
                        "block {key} has dims {dims:?}, expected [{dim}, {dim}, {dim}]"
                    )));
                }
                let array = Array3::from_shape_vec((dim, dim, dim), data)
                    .map_err(|e| ModelIoError::Malformed(e.to_string()))?;
                blocks.push(array);
            }
            let mut iter = blocks.into_iter();
            let per_key = PerKey::from_fn(|_| iter.next().expect("six blocks were read"));
            Ok(CompositionModel::Tensor(TensorParams::new(per_key)?))
        }
        other => Err(ModelIoError::UnknownVariant(other.to_string())),
    }
}

fn expect_blocks(found: u64, expected: u64, variant: &str) -> Result<(), ModelIoError> {
    if found != expected {
        return Err(ModelIoError::Malformed(format!(
            "variant {variant:?} expects {expected} block(s), found {found}"
        )));
    }
    Ok(())
}

fn write_u64<W: Write>(out: &mut W, value: u64) -> std::io::Result<()> {
    out.write_all(&value.to_le_bytes())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, ModelIoError> {
    let mut buf = [0u8; 8];
    input
        .read_exact(&mut buf)
        .map_err(|_| ModelIoError::Malformed("unexpected end of file".to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn write_string<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    write_u64(out, s.len() as u64)?;
    out.write_all(s.as_bytes())
}

fn read_string<R: Read>(input: &mut R) -> Result<String, ModelIoError> {
    let len = read_u64(input)?;
    if len > MAX_STRING_LEN {
        return Err(ModelIoError::Malformed(format!(
            "string length {len} exceeds the sanity limit"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    input
        .read_exact(&mut buf)
        .map_err(|_| ModelIoError::Malformed("unexpected end of file".to_string()))?;
    String::from_utf8(buf).map_err(|_| ModelIoError::Malformed("string is not UTF-8".to_string()))
}

fn write_block<W: Write>(
    out: &mut W,
    name: &str,
    dims: &[usize],
    data: &[f64],
) -> std::io::Result<()> {
    write_string(out, name)?;
    write_u64(out, dims.len() as u64)?;
    for &d in dims {
        write_u64(out, d as u64)?;
    }
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    for &v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
fn read_block<R: Read>(input: &mut R) -> Result<(String, Vec<usize>, Vec<f64>), ModelIoError> {
    let name = read_string(input)?;
    let ndim = read_u64(input)?;
    if ndim > 8 {
        return Err(ModelIoError::Malformed(format!(
            "block {name:?} claims {ndim} dimensions"
        )));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut elems: u64 = 1;
    for _ in 0..ndim {
        let d = read_u64(input)?;
        elems = elems.saturating_mul(d);
        dims.push(d as usize);
    }
    if elems > MAX_BLOCK_ELEMS {
        return Err(ModelIoError::Malformed(format!(
            "block {name:?} claims {elems} elements"
        )));
    }
    let mut data = Vec::with_capacity(elems as usize);
    let mut buf = [0u8; 8];
    for _ in 0..elems {
        input
            .read_exact(&mut buf)
            .map_err(|_| ModelIoError::Malformed("unexpected end of file".to_string()))?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok((name, dims, data))
}
