//! Tensor and checkpoint serialization.
//!
//! Tensor file ("LTF1"): magic `LTF1`, dtype byte (1 = f32), rank byte, two
//! reserved zero bytes, rank little-endian u32 extents, then the payload as
//! little-endian f32 in row-major order with the last axis fastest.
//!
//! Container ("LTC1"): magic `LTC1`, little-endian u32 entry count, then per
//! entry a little-endian u16 name length, the UTF-8 name, and an embedded
//! LTF1 record. Checkpoints are containers holding `meta/...` entries for the
//! architecture followed by `param/<layer>/{weight,bias}` tensors in layer
//! order. Round trips are bit-exact.

use std::path::Path;

use crate::baseline::BaselineConfig;
use crate::decoder::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::pyramid::{ALL_MODES, ALL_WINDOWS};
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"LTF1";
const CONTAINER_MAGIC: &[u8; 4] = b"LTC1";
const DTYPE_F32: u8 = 1;

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn encode_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) -> Result<()> {
    let rank = t.shape().len();
    if rank > u8::MAX as usize {
        return Err(Error::Config(format!("tensor rank {rank} exceeds format limit")));
    }
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(DTYPE_F32);
    buf.push(rank as u8);
    buf.extend_from_slice(&[0u8, 0u8]);
    for &e in t.shape() {
        let e32 = u32::try_from(e)
            .map_err(|_| Error::Config(format!("extent {e} exceeds format limit")))?;
        buf.extend_from_slice(&e32.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn decode_tensor(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<Tensor<f32>> {
    let need = |pos: usize, n: usize, what: &str| -> Result<()> {
        if pos + n > bytes.len() {
            Err(format_err(path, bytes.len(), format!("truncated {what}")))
        } else {
            Ok(())
        }
    };
    need(*pos, 8, "tensor header")?;
    if &bytes[*pos..*pos + 4] != TENSOR_MAGIC {
        return Err(format_err(path, *pos, "bad tensor magic (expected LTF1)"));
    }
    if bytes[*pos + 4] != DTYPE_F32 {
        return Err(format_err(
            path,
            *pos + 4,
            format!("unsupported dtype code {}", bytes[*pos + 4]),
        ));
    }
    let rank = bytes[*pos + 5] as usize;
    *pos += 8;
    need(*pos, 4 * rank, "extent list")?;
    let mut shape = Vec::with_capacity(rank);
    let mut len = 1usize;
    for _ in 0..rank {
        let e = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()) as usize;
        shape.push(e);
        len = len.saturating_mul(e);
        *pos += 4;
    }
    need(*pos, 4 * len, "payload")?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()));
        *pos += 4;
    }
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let t = decode_tensor(&bytes, &mut pos, path)?;
    if pos != bytes.len() {
        return Err(format_err(path, pos, "trailing bytes after payload"));
    }
    Ok(t)
}

pub fn write_container(path: impl AsRef<Path>, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Config(format!("too many container entries: {}", entries.len())))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let nlen = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("entry name too long: {name}")))?;
        buf.extend_from_slice(&nlen.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_tensor(&mut buf, t)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(format_err(path, bytes.len(), "truncated container header"));
    }
    if &bytes[0..4] != CONTAINER_MAGIC {
        return Err(format_err(path, 0, "bad container magic (expected LTC1)"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        if pos + 2 > bytes.len() {
            return Err(format_err(path, bytes.len(), "truncated entry name length"));
        }
        let nlen = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + nlen > bytes.len() {
            return Err(format_err(path, bytes.len(), "truncated entry name"));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + nlen])
            .map_err(|_| format_err(path, pos, "entry name is not UTF-8"))?
            .to_string();
        pos += nlen;
        let t = decode_tensor(&bytes, &mut pos, path)?;
        entries.push((name, t));
    }
    if pos != bytes.len() {
        return Err(format_err(path, pos, "trailing bytes after last entry"));
    }
    Ok(entries)
}

fn vec_entry(name: &str, values: &[f32]) -> (String, Tensor<f32>) {
    let t = Tensor::new(vec![values.len().max(1)], if values.is_empty() {
        vec![0.0]
    } else {
        values.to_vec()
    })
    .expect("shape matches data");
    (name.to_string(), t)
}

fn flags(selected: impl Fn(usize) -> bool, n: usize) -> Vec<f32> {
    (0..n).map(|i| if selected(i) { 1.0 } else { 0.0 }).collect()
}

fn param_entries(params: &ParameterSet<f32>, out: &mut Vec<(String, Tensor<f32>)>) {
    for e in params.entries() {
        out.push((format!("param/{}/weight", e.name), e.weight.clone()));
        out.push((format!("param/{}/bias", e.name), e.bias.clone()));
    }
}

fn params_from_entries(entries: &[(String, Tensor<f32>)], path: &Path) -> Result<ParameterSet<f32>> {
    let items: Vec<&(String, Tensor<f32>)> = entries
        .iter()
        .filter(|(n, _)| n.starts_with("param/"))
        .collect();
    if items.len() % 2 != 0 {
        return Err(format_err(path, 0, "dangling weight entry without bias"));
    }
    let mut set = ParameterSet::new();
    for pair in items.chunks(2) {
        let (wname, weight) = pair[0];
        let (bname, bias) = pair[1];
        let layer = wname
            .strip_prefix("param/")
            .and_then(|s| s.strip_suffix("/weight"))
            .ok_or_else(|| format_err(path, 0, format!("unexpected entry order at '{wname}'")))?;
        let expect_bias = format!("param/{layer}/bias");
        if bname != &expect_bias {
            return Err(format_err(
                path,
                0,
                format!("expected '{expect_bias}' after '{wname}', found '{bname}'"),
            ));
        }
        set.push(layer, weight.clone(), bias.clone())?;
    }
    Ok(set)
}

fn find<'a>(
    entries: &'a [(String, Tensor<f32>)],
    name: &str,
    path: &Path,
) -> Result<&'a Tensor<f32>> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| format_err(path, 0, format!("missing checkpoint entry '{name}'")))
}

const ARCH_DECODER: f32 = 0.0;
const ARCH_BASELINE: f32 = 1.0;

pub fn save_decoder_checkpoint(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
) -> Result<()> {
    let mut entries = Vec::new();
    entries.push(vec_entry("meta/arch", &[ARCH_DECODER]));
    entries.push(vec_entry(
        "meta/model",
        &[
            cfg.rank as f32,
            cfg.channels as f32,
            cfg.convs_per_block as f32,
            if cfg.diffeomorphic { 1.0 } else { 0.0 },
            if cfg.include_original { 1.0 } else { 0.0 },
        ],
    ));
    entries.push(vec_entry(
        "meta/pool_modes",
        &flags(|i| cfg.pool_modes.contains(&ALL_MODES[i]), ALL_MODES.len()),
    ));
    entries.push(vec_entry(
        "meta/pool_windows",
        &flags(|i| cfg.pool_windows.contains(&ALL_WINDOWS[i]), ALL_WINDOWS.len()),
    ));
    if let Some(scale) = &cfg.displacement_scale {
        let vals: Vec<f32> = scale.iter().map(|&s| s as f32).collect();
        entries.push(vec_entry("meta/displacement_scale", &vals));
    }
    param_entries(params, &mut entries);
    write_container(path, &entries)
}

pub fn save_baseline_checkpoint(
    path: impl AsRef<Path>,
    cfg: &BaselineConfig,
    params: &ParameterSet<f32>,
) -> Result<()> {
    let mut entries = Vec::new();
    entries.push(vec_entry("meta/arch", &[ARCH_BASELINE]));
    entries.push(vec_entry("meta/model", &[cfg.rank as f32]));
    let widths: Vec<f32> = cfg.encoder_widths.iter().map(|&w| w as f32).collect();
    entries.push(vec_entry("meta/encoder_widths", &widths));
    param_entries(params, &mut entries);
    write_container(path, &entries)
}

/// Either network's checkpoint, decoded.
pub enum Checkpoint {
    Decoder(ModelConfig, ParameterSet<f32>),
    Baseline(BaselineConfig, ParameterSet<f32>),
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let entries = read_container(path)?;
    let arch = find(&entries, "meta/arch", path)?.data()[0];
    let params = params_from_entries(&entries, path)?;
    if arch == ARCH_BASELINE {
        let model = find(&entries, "meta/model", path)?;
        let widths = find(&entries, "meta/encoder_widths", path)?;
        let cfg = BaselineConfig {
            rank: model.data()[0] as usize,
            encoder_widths: widths.data().iter().map(|&w| w as usize).collect(),
        };
        return Ok(Checkpoint::Baseline(cfg, params));
    }
    let model = find(&entries, "meta/model", path)?;
    if model.len() < 5 {
        return Err(format_err(path, 0, "meta/model entry too short"));
    }
    let modes = find(&entries, "meta/pool_modes", path)?;
    let windows = find(&entries, "meta/pool_windows", path)?;
    let scale = entries
        .iter()
        .find(|(n, _)| n == "meta/displacement_scale")
        .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>());
    let cfg = ModelConfig {
        rank: model.data()[0] as usize,
        channels: model.data()[1] as usize,
        convs_per_block: model.data()[2] as usize,
        diffeomorphic: model.data()[3] > 0.5,
        displacement_scale: scale,
        pool_modes: ALL_MODES
            .iter()
            .zip(modes.data())
            .filter(|(_, &f)| f > 0.5)
            .map(|(&m, _)| m)
            .collect(),
        pool_windows: ALL_WINDOWS
            .iter()
            .zip(windows.data())
            .filter(|(_, &f)| f > 0.5)
            .map(|(&w, _)| w)
            .collect(),
        include_original: model.data()[4] > 0.5,
    };
    Ok(Checkpoint::Decoder(cfg, params))
}
