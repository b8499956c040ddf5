//! Binary checkpoint format shared by spiking and conventional models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "SNNMIACK"
//! version    u32      1
//! kind       u8       0 = SNN, 1 = ANN
//! key        32 bytes provenance hash (all zero when unused)
//! layers     u32      count, then per layer:
//!              u8 tag 0 = linear: u32 inputs, u32 outputs
//!              u8 tag 1 = conv2d: u32 in_channels, out_channels, height, width, kernel
//! SNN only:  u32 latency, f32 decay, u32 n, f32 threshold × n, f32 reset, f32 surrogate width
//! ANN only:  u8 activation (0 sigmoid, 1 relu, 2 softplus)
//! weights    per layer: row-major f32 weight block, then f32 bias block
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::network::{AnnNetwork, Layer, LayerSpec, Model, SpikingNetwork};
use crate::tensor::{Activation, ConvGeometry};

pub const MAGIC: &[u8; 8] = b"SNNMIACK";
pub const VERSION: u32 = 1;

pub type CheckpointKey = [u8; 32];

pub fn encode(model: &Model, key: &CheckpointKey) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.push(match model {
        Model::Snn(_) => 0,
        Model::Ann(_) => 1,
    });
    out.extend_from_slice(key);
    out.write_u32::<LittleEndian>(model.layers().len() as u32).unwrap();
    for layer in model.layers() {
        match layer.spec {
            LayerSpec::Linear { inputs, outputs } => {
                out.push(0);
                out.write_u32::<LittleEndian>(inputs as u32).unwrap();
                out.write_u32::<LittleEndian>(outputs as u32).unwrap();
            }
            LayerSpec::Conv2d(g) => {
                out.push(1);
                for v in [g.in_channels, g.out_channels, g.height, g.width, g.kernel] {
                    out.write_u32::<LittleEndian>(v as u32).unwrap();
                }
            }
        }
    }
    match model {
        Model::Snn(n) => {
            out.write_u32::<LittleEndian>(n.latency as u32).unwrap();
            out.write_f32::<LittleEndian>(n.decay).unwrap();
            out.write_u32::<LittleEndian>(n.thresholds.len() as u32).unwrap();
            for &t in &n.thresholds {
                out.write_f32::<LittleEndian>(t).unwrap();
            }
            out.write_f32::<LittleEndian>(n.reset).unwrap();
            out.write_f32::<LittleEndian>(n.surrogate_width).unwrap();
        }
        Model::Ann(n) => out.push(n.activation.code()),
    }
    for layer in model.layers() {
        for t in [&layer.weight, &layer.bias] {
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
    }
    out
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a checkpoint; `origin` is only used in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Model, CheckpointKey)> {
    let truncated = |_| malformed(origin, "truncated");
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(malformed(origin, "bad magic"));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(malformed(origin, format!("unsupported version {version}")));
    }
    let kind = cur.read_u8().map_err(truncated)?;
    let mut key = [0u8; 32];
    cur.read_exact(&mut key).map_err(truncated)?;
    let n_layers = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(malformed(origin, format!("implausible layer count {n_layers}")));
    }
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = cur.read_u8().map_err(truncated)?;
        let mut dims = |n: usize| -> Result<Vec<usize>> {
            (0..n)
                .map(|_| {
                    cur.read_u32::<LittleEndian>()
                        .map(|v| v as usize)
                        .map_err(truncated)
                })
                .collect()
        };
        specs.push(match tag {
            0 => {
                let d = dims(2)?;
                LayerSpec::Linear {
                    inputs: d[0],
                    outputs: d[1],
                }
            }
            1 => {
                let d = dims(5)?;
                LayerSpec::Conv2d(ConvGeometry {
                    in_channels: d[0],
                    out_channels: d[1],
                    height: d[2],
                    width: d[3],
                    kernel: d[4],
                })
            }
            other => return Err(malformed(origin, format!("unknown layer tag {other}"))),
        });
    }
    let specs = crate::network::stack_specs(specs).map_err(|e| malformed(origin, e.to_string()))?;

    enum Header {
        Snn {
            latency: usize,
            decay: f32,
            thresholds: Vec<f32>,
            reset: f32,
            width: f32,
        },
        Ann(Activation),
    }
    let header = match kind {
        0 => {
            let latency = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let decay = cur.read_f32::<LittleEndian>().map_err(truncated)?;
            let n = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if n != n_layers - 1 {
                return Err(malformed(origin, "threshold count must equal hidden layer count"));
            }
            let thresholds = (0..n)
                .map(|_| cur.read_f32::<LittleEndian>().map_err(truncated))
                .collect::<Result<Vec<_>>>()?;
            let reset = cur.read_f32::<LittleEndian>().map_err(truncated)?;
            let width = cur.read_f32::<LittleEndian>().map_err(truncated)?;
            Header::Snn {
                latency,
                decay,
                thresholds,
                reset,
                width,
            }
        }
        1 => {
            let code = cur.read_u8().map_err(truncated)?;
            Header::Ann(
                Activation::from_code(code)
                    .ok_or_else(|| malformed(origin, format!("unknown activation {code}")))?,
            )
        }
        other => return Err(malformed(origin, format!("unknown model kind {other}"))),
    };

    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let mut template = Layer::zeroed(spec);
        for t in [&mut template.weight, &mut template.bias] {
            cur.read_f32_into::<LittleEndian>(t.data_mut())
                .map_err(truncated)?;
        }
        layers.push(template);
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(malformed(origin, "trailing bytes after weights"));
    }

    let model = match header {
        Header::Snn {
            latency,
            decay,
            thresholds,
            reset,
            width,
        } => {
            if latency == 0 {
                return Err(malformed(origin, "latency must be at least 1"));
            }
            Model::Snn(SpikingNetwork {
                layers,
                latency,
                decay,
                thresholds,
                reset,
                surrogate_width: width,
            })
        }
        Header::Ann(activation) => Model::Ann(AnnNetwork { layers, activation }),
    };
    Ok((model, key))
}

pub fn save(path: &Path, model: &Model, key: &CheckpointKey) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(model, key)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointKey)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Reads only the provenance key, without decoding weights.
pub fn peek_key(path: &Path) -> Result<CheckpointKey> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 4 + 1 + 32 || &bytes[..8] != MAGIC {
        return Err(malformed(path, "bad header"));
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&bytes[13..45]);
    Ok(key)
}
