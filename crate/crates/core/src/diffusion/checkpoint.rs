//! Little-endian model checkpoints.
//!
//! Layout: 4-byte magic `VNMD`, u32 version, u32 ps, u32 embedding size,
//! u32 observation side, u32 hidden layer count, one u32 per hidden width,
//! then every layer's weights (row-major) followed by its biases as f64.

use super::mlp::Dense;
use super::{DiffusionError, MlpConfig, MlpDenoiser};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VNMD";
const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 20;

pub fn save_checkpoint(model: &MlpDenoiser, path: &Path) -> Result<(), DiffusionError> {
    let mut w = BufWriter::new(File::create(path)?);
    let c = &model.config;
    w.write_all(MAGIC)?;
    for v in [VERSION, c.ps as u32, c.embed_dim as u32, c.obs_side as u32, c.hidden.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &h in &c.hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    for layer in &model.layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffusionError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> DiffusionError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DiffusionError::Checkpoint("truncated file".into())
    } else {
        DiffusionError::Io(e)
    }
}

fn dim(v: u32, what: &str) -> Result<usize, DiffusionError> {
    if v == 0 || v > MAX_DIM {
        return Err(DiffusionError::Checkpoint(format!("{what} {v} out of range")));
    }
    Ok(v as usize)
}

pub fn load_checkpoint(path: &Path) -> Result<MlpDenoiser, DiffusionError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DiffusionError::Checkpoint("wrong magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DiffusionError::Checkpoint(format!("unsupported version {version}")));
    }
    let ps = dim(read_u32(&mut r)?, "trajectory length")?;
    let embed_dim = dim(read_u32(&mut r)?, "embedding size")?;
    let obs_side = dim(read_u32(&mut r)?, "observation side")?;
    let n_hidden = read_u32(&mut r)?;
    if n_hidden > 16 {
        return Err(DiffusionError::Checkpoint(format!("{n_hidden} hidden layers")));
    }
    let hidden = (0..n_hidden)
        .map(|_| dim(read_u32(&mut r)?, "hidden width"))
        .collect::<Result<Vec<_>, _>>()?;
    let config = MlpConfig {
        ps,
        hidden,
        embed_dim,
        obs_side,
    };
    let dims = config.layer_dims();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut buf = [0u8; 8];
    for d in dims.windows(2) {
        let mut read_n = |n: usize| -> Result<Vec<f64>, DiffusionError> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut buf).map_err(truncated)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        };
        let weights = read_n(d[0] * d[1])?;
        let bias = read_n(d[1])?;
        layers.push(Dense {
            inputs: d[0],
            outputs: d[1],
            weights,
            bias,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DiffusionError::Checkpoint("trailing bytes".into()));
    }
    MlpDenoiser::from_layers(config, layers)
}
