//! Binary dataset container.
//!
//! Layout, all little-endian: magic `SLRN`, `u32` version, `u32` N, `u32` M,
//! `u32` count, `u64` master seed, then for every instance `x` (N doubles),
//! `H` (M·N doubles, row-major), `y` (M doubles) and the noise variance.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use shrinklearn_core::datagen::Instance;
use shrinklearn_core::linalg::Matrix;

use crate::error::{AppError, Result};

pub const MAGIC: [u8; 4] = *b"SLRN";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 8;

/// Generation parameters echoed next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub snr_db: f64,
    pub count: usize,
    pub seed: u64,
    pub domain: String,
    pub fixed_matrix: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub master_seed: u64,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.instances.first().map_or(0, Instance::n)
    }

    pub fn m(&self) -> usize {
        self.instances.first().map_or(0, Instance::m)
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .map_err(|_| AppError::Validation(format!("{what} = {v} does not fit the file header")))
}

pub fn write_dataset<W: Write>(w: &mut W, master_seed: u64, instances: &[Instance]) -> Result<()> {
    let (n, m) = instances.first().map_or((0, 0), |i| (i.n(), i.m()));
    if instances.iter().any(|i| i.n() != n || i.m() != m) {
        return Err(AppError::Validation(
            "instances in one dataset must share N and M".into(),
        ));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + instances.len() * 8 * (n + m * n + m + 1));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim_u32(n, "N")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(m, "M")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(instances.len(), "count")?.to_le_bytes());
    buf.extend_from_slice(&master_seed.to_le_bytes());
    for inst in instances {
        inst.validate()?;
        let values = inst
            .x_true
            .iter()
            .chain(inst.h.as_slice())
            .chain(&inst.y)
            .chain(std::iter::once(&inst.noise_var));
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| AppError::Io(e.to_string()))
}

fn take<'a>(bytes: &mut &'a [u8], len: usize) -> io::Result<&'a [u8]> {
    if bytes.len() < len {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "truncated dataset",
        ));
    }
    let (head, rest) = bytes.split_at(len);
    *bytes = rest;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8]) -> io::Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

fn f64s(bytes: &mut &[u8], count: usize) -> io::Result<Vec<f64>> {
    Ok(take(bytes, count * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Parses a dataset; loaded instances carry the file's master seed and their
/// position in the file as stream id.
pub fn parse_dataset(mut bytes: &[u8]) -> io::Result<Dataset> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    if take(&mut bytes, 4)? != MAGIC {
        return Err(bad("not a dataset file (bad magic)"));
    }
    let version = u32_at(&mut bytes)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported dataset version {version}")));
    }
    let n = u32_at(&mut bytes)? as usize;
    let m = u32_at(&mut bytes)? as usize;
    let count = u32_at(&mut bytes)? as usize;
    let master_seed = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap());
    let per_instance = n + m * n + m + 1;
    if bytes.len() != count * per_instance * 8 {
        return Err(bad("payload length does not match the header"));
    }
    let mut instances = Vec::with_capacity(count);
    for index in 0..count {
        let x_true = f64s(&mut bytes, n)?;
        let h = Matrix::from_row_major(m, n, f64s(&mut bytes, m * n)?)
            .map_err(|e| bad(&e.to_string()))?;
        let y = f64s(&mut bytes, m)?;
        let noise_var = f64s(&mut bytes, 1)?[0];
        instances.push(Instance {
            x_true,
            h,
            y,
            noise_var,
            seed: master_seed,
            stream: index as u64,
        });
    }
    Ok(Dataset {
        master_seed,
        instances,
    })
}

pub fn save_dataset(path: &Path, master_seed: u64, instances: &[Instance]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, master_seed, instances)?;
    fs::write(path, buf).map_err(|e| AppError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::io(path, e))?;
    let data = parse_dataset(&bytes).map_err(|e| AppError::format(path, e))?;
    if data.instances.is_empty() {
        return Err(AppError::Validation(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    Ok(data)
}
