//! Tensor files: the little-endian binary format (`.msot`) and a JSON form
//! `{"dims": [...], "values": [...]}` with values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use msopt_core::tensor::DenseTensor;
use msopt_core::tucker::{read_binary, write_binary};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let t = match extension(path) {
        "json" => {
            let j: JsonTensor = serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing {}", path.display()))?;
            DenseTensor::new(j.dims, j.values)?
        }
        _ => read_binary(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?,
    };
    if t.values().iter().any(|v| !v.is_finite()) {
        bail!("{} contains non-finite entries", path.display());
    }
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    match extension(path) {
        "json" => {
            let j = JsonTensor { dims: t.dims().to_vec(), values: t.values().to_vec() };
            serde_json::to_writer(BufWriter::new(file), &j)?;
        }
        _ => write_binary(t, BufWriter::new(file))?,
    }
    Ok(())
}
