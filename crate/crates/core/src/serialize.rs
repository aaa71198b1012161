//! Model container: a text header followed by little-endian kernel triplets.
//!
//! ```text
//! mlcsc-model 1
//! signal <spatial_len> <channels>
//! lambdas <lambda_1> .. <lambda_L>
//! layers <L>
//! layer <m_in> <m_out> <n> <stride> <nnz>
//! filter_nnz <count_0> .. <count_{m_out-1}>
//! ...
//! end
//! ```
//!
//! After the `end` line come, for each layer in order and each filter in
//! order, `count_f` triplets of (offset: u32, channel: u32, value: f64).

use std::fs;
use std::path::Path;

use crate::conv::{ConvLayer, KernelEntry};
use crate::error::{Error, Result};
use crate::model::MlcscModel;
use crate::tensor::SignalGeometry;

pub const MAGIC: &str = "mlcsc-model";
pub const VERSION: u32 = 1;
const TRIPLET_BYTES: usize = 16;

pub fn to_bytes(model: &MlcscModel) -> Vec<u8> {
    let g = model.geometry();
    let mut header = format!("{MAGIC} {VERSION}\nsignal {} {}\nlambdas", g.spatial_len(), g.channels());
    for l in model.lambdas() {
        header.push_str(&format!(" {l}"));
    }
    header.push_str(&format!("\nlayers {}\n", model.depth()));
    for layer in model.layers() {
        header.push_str(&format!(
            "layer {} {} {} {} {}\nfilter_nnz",
            layer.m_in(),
            layer.m_out(),
            layer.n(),
            layer.stride(),
            layer.nnz()
        ));
        for k in layer.kernels() {
            header.push_str(&format!(" {}", k.len()));
        }
        header.push('\n');
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for layer in model.layers() {
        for e in layer.kernels().iter().flatten() {
            out.extend_from_slice(&(e.offset as u32).to_le_bytes());
            out.extend_from_slice(&(e.channel as u32).to_le_bytes());
            out.extend_from_slice(&e.value.to_le_bytes());
        }
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
            offset: start,
            message: "unterminated header line".into(),
        })?;
        self.pos = start + end + 1;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format {
            offset: start,
            message: "header is not UTF-8".into(),
        })?;
        Ok((start, text))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<usize>)> {
        let (offset, text) = self.line()?;
        let mut parts = text.split_ascii_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Format {
                offset,
                message: format!("expected `{key}` line, found `{text}`"),
            });
        }
        let values = parts
            .map(|p| {
                p.parse::<usize>().map_err(|_| Error::Format {
                    offset,
                    message: format!("bad integer `{p}` in `{key}` line"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((offset, values))
    }
}

fn expect_len(offset: usize, key: &str, values: &[usize], want: usize) -> Result<()> {
    if values.len() != want {
        return Err(Error::Format {
            offset,
            message: format!("`{key}` line needs {want} values, found {}", values.len()),
        });
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<MlcscModel> {
    let mut h = Header { bytes, pos: 0 };
    let (offset, first) = h.line()?;
    let mut parts = first.split_ascii_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Format {
            offset,
            message: "not a model file".into(),
        });
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => {
            return Err(Error::Format {
                offset,
                message: format!("unsupported version {other:?}"),
            })
        }
    }
    let (offset, signal) = h.keyed("signal")?;
    expect_len(offset, "signal", &signal, 2)?;
    let geometry = SignalGeometry::new(signal[0], signal[1])?;
    let (_, lambdas) = h.keyed("lambdas")?;
    let (offset, count) = h.keyed("layers")?;
    expect_len(offset, "layers", &count, 1)?;
    let mut shapes = Vec::with_capacity(count[0]);
    for _ in 0..count[0] {
        let (offset, dims) = h.keyed("layer")?;
        expect_len(offset, "layer", &dims, 5)?;
        let (offset, filter_nnz) = h.keyed("filter_nnz")?;
        expect_len(offset, "filter_nnz", &filter_nnz, dims[1])?;
        if filter_nnz.iter().sum::<usize>() != dims[4] {
            return Err(Error::Format {
                offset,
                message: "filter counts do not add up to the layer nnz".into(),
            });
        }
        shapes.push((dims, filter_nnz));
    }
    let (offset, end) = h.line()?;
    if end != "end" {
        return Err(Error::Format {
            offset,
            message: format!("expected `end`, found `{end}`"),
        });
    }

    let mut pos = h.pos;
    let mut layers = Vec::with_capacity(shapes.len());
    for (dims, filter_nnz) in shapes {
        let mut kernels = Vec::with_capacity(dims[1]);
        for count in filter_nnz {
            let mut kernel = Vec::with_capacity(count);
            for _ in 0..count {
                let chunk = bytes.get(pos..pos + TRIPLET_BYTES).ok_or_else(|| Error::Format {
                    offset: pos,
                    message: "truncated kernel data".into(),
                })?;
                kernel.push(KernelEntry {
                    offset: u32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes")) as usize,
                    channel: u32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes")) as usize,
                    value: f64::from_le_bytes(chunk[8..16].try_into().expect("8 bytes")),
                });
                pos += TRIPLET_BYTES;
            }
            kernels.push(kernel);
        }
        layers.push(ConvLayer::new(dims[0], dims[1], dims[2], dims[3], kernels)?);
    }
    if pos != bytes.len() {
        return Err(Error::Format {
            offset: pos,
            message: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    MlcscModel::new(layers, geometry, lambdas)
}

pub fn save(model: &MlcscModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MlcscModel> {
    from_bytes(&fs::read(path)?)
}
