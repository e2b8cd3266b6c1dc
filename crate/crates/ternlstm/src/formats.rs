//! On-disk model directories, LUT dumps and CSV helpers.
//!
//! A model directory holds `model.txt` (network shape and training
//! settings), `normalization.csv`, and one file per tensor: `NAME.bin` with
//! little-endian f64 values, or `NAME.int2` with packed 2-bit codes for the
//! quantized tensors of a packed model.

use std::path::Path;

use ternlstm_core::fxp::LutTable;
use ternlstm_core::model::{NetworkConfig, NetworkParams};
use ternlstm_core::quant::{pack_codes, quantize_binary, quantize_ternary, unpack_codes, Precision};

use crate::config::{network_config, parse_precision, write_network, KeyValues};
use crate::error::{data, io_err, Result};
use crate::ingest::Normalization;

pub const MODEL_FILE: &str = "model.txt";
pub const NORMALIZATION_FILE: &str = "normalization.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Full-precision shadow weights.
    Shadow,
    /// Quantizable tensors as 2-bit codes.
    Packed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub precision: Precision,
    pub zero_bias: bool,
    pub encoding: Encoding,
    pub normalization: Normalization,
    /// Extra provenance copied into `model.txt`.
    pub meta: KeyValues,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_bytes(bytes: &[u8], n: usize) -> Result<Vec<f64>> {
    if bytes.len() != 8 * n {
        return Err(data(format!("{} bytes do not hold {n} f64 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn codes(values: &[f64], precision: Precision) -> Vec<i8> {
    match precision {
        Precision::Binary => values.iter().map(|&v| quantize_binary(v)).collect(),
        _ => values.iter().map(|&v| quantize_ternary(v)).collect(),
    }
}

pub fn save_model(dir: &Path, m: &SavedModel) -> Result<()> {
    if m.encoding == Encoding::Packed && !m.precision.is_quantized() {
        return Err(data("a full-precision model cannot be packed"));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut kv = m.meta.clone();
    write_network(&mut kv, &m.config);
    kv.insert("precision", m.precision.name());
    kv.insert("zero_bias", m.zero_bias);
    kv.insert(
        "encoding",
        match m.encoding {
            Encoding::Shadow => "shadow",
            Encoding::Packed => "packed",
        },
    );
    write(&dir.join(MODEL_FILE), kv.to_text())?;
    write(&dir.join(NORMALIZATION_FILE), m.normalization.to_text())?;
    for t in m.params.tensors() {
        if m.encoding == Encoding::Packed && t.role.quantizable() {
            write(&dir.join(format!("{}.int2", t.name)), pack_codes(&codes(t.data, m.precision)))?;
        } else {
            write(&dir.join(format!("{}.bin", t.name)), f64_bytes(t.data))?;
        }
    }
    Ok(())
}

/// Keys of `model.txt` that are not provenance.
const MODEL_KEYS: &[&str] = &[
    "window", "steps", "channels", "hidden", "classes", "use_cnn", "conv", "residual", "precision", "zero_bias", "encoding",
];

pub fn load_model(dir: &Path) -> Result<SavedModel> {
    let kv = KeyValues::load(&dir.join(MODEL_FILE))?;
    let config = network_config(&kv, 0, 0)?;
    let precision = parse_precision(kv.get("precision").unwrap_or("full"))?;
    let encoding = match kv.get("encoding").unwrap_or("shadow") {
        "shadow" => Encoding::Shadow,
        "packed" => Encoding::Packed,
        other => return Err(data(format!("unknown encoding `{other}`"))),
    };
    let mut params = NetworkParams::zeros(&config);
    for t in params.tensors_mut() {
        let n = t.data.len();
        let values = if encoding == Encoding::Packed && t.role.quantizable() {
            let c = unpack_codes(&read(&dir.join(format!("{}.int2", t.name)))?, n)?;
            c.into_iter().map(f64::from).collect()
        } else {
            f64_from_bytes(&read(&dir.join(format!("{}.bin", t.name)))?, n)?
        };
        t.data.copy_from_slice(&values);
    }
    let norm_path = dir.join(NORMALIZATION_FILE);
    let normalization = if norm_path.is_file() {
        Normalization::from_text(&String::from_utf8_lossy(&read(&norm_path)?))?
    } else {
        Normalization::identity(config.channels)
    };
    if normalization.mean.len() != config.channels {
        return Err(data("normalization does not match the channel count"));
    }
    let mut meta = KeyValues::default();
    for k in kv.keys().filter(|k| !MODEL_KEYS.contains(k)) {
        meta.insert(k, kv.get(k).expect("listed"));
    }
    Ok(SavedModel {
        config,
        params,
        precision,
        zero_bias: kv.parse_or("zero_bias", false)?,
        encoding,
        normalization,
        meta,
    })
}

/// `index,u_low,u_high,raw,value` per cell.
pub fn lut_to_csv(t: &LutTable) -> String {
    let mut s = String::from("index,u_low,u_high,raw,value\n");
    for (i, e) in t.entries().iter().enumerate() {
        let lo = t.u_min() + i as f64 * t.cell_width();
        s += &format!("{i},{lo},{},{},{}\n", lo + t.cell_width(), e.raw(), e.value());
    }
    s
}

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s += &r;
        s.push('\n');
    }
    write(path, s)
}
