//! Textual checkpoints: the model configuration as one JSON line, then every
//! parameter tensor with a shape header and its values as IEEE-754 bit
//! patterns in hex, so a save/load round trip is bit-exact.
//!
//! ```text
//! gdnlab-checkpoint 1
//! config {"obs_dim":4,...}
//! param layer0.w_self 4 128
//! 3fb99999999999a ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{GdnModel, ModelConfig};

const MAGIC: &str = "gdnlab-checkpoint";
const VERSION: u32 = 1;
const MAX_WIDTH: usize = 1 << 14;
const MAX_LAYERS: usize = 64;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported checkpoint version {0}")]
    Version(String),
    #[error("bad model config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_err(line: usize, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        line,
        msg: msg.into(),
    }
}

pub fn write_checkpoint(model: &GdnModel) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    let cfg = serde_json::to_string(&model.config).expect("config serializes");
    let _ = writeln!(out, "config {cfg}");
    for (name, value) in model.params.iter() {
        let _ = writeln!(out, "param {name} {} {}", value.nrows(), value.ncols());
        let words: Vec<String> = value
            .iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

/// Upper bound on the number of scalars a config allocates.
fn param_upper_bound(cfg: &ModelConfig) -> usize {
    let (x, h) = (cfg.obs_dim, cfg.hidden);
    let w = x.max(h).saturating_add(1);
    let agg = w.max(cfg.heads.saturating_mul(cfg.value_dim));
    let attn = cfg.heads.saturating_mul(2 * cfg.key_dim + cfg.value_dim);
    let gru = 3usize.saturating_mul(w.saturating_mul(h.saturating_mul(2).saturating_add(1)));
    let per_layer = w
        .saturating_mul(attn.saturating_add(2).saturating_add(h.saturating_mul(3)))
        .saturating_add(agg.saturating_mul(h));
    let heads = w.saturating_mul(cfg.n_outputs.saturating_add(2));
    per_layer
        .saturating_mul(cfg.layers.len())
        .saturating_add(gru)
        .saturating_add(heads)
}

fn check_config(cfg: &ModelConfig, text_len: usize) -> Result<(), CheckpointError> {
    let widths = [
        cfg.obs_dim,
        cfg.hidden,
        cfg.n_outputs,
        cfg.key_dim,
        cfg.value_dim,
        cfg.heads,
    ];
    if widths.iter().any(|&w| w > MAX_WIDTH) || cfg.layers.len() > MAX_LAYERS {
        return Err(CheckpointError::Config(
            "dimensions exceed checkpoint limits".into(),
        ));
    }
    cfg.validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    // every stored value takes 17 bytes, so a short file cannot describe a huge model
    if param_upper_bound(cfg) > text_len.saturating_mul(4).saturating_add(4096) {
        return Err(CheckpointError::Config(
            "config describes more parameters than the file holds".into(),
        ));
    }
    Ok(())
}

pub fn parse_checkpoint(text: &str) -> Result<GdnModel, CheckpointError> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (_, head) = lines.next().ok_or_else(|| fmt_err(1, "empty checkpoint"))?;
    match head.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(CheckpointError::Version(v.trim().to_string())),
        _ => return Err(fmt_err(1, "missing checkpoint header")),
    }
    let (k, cfg_line) = lines
        .next()
        .ok_or_else(|| fmt_err(2, "missing config line"))?;
    let json = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| fmt_err(k, "expected `config <json>`"))?;
    let cfg: ModelConfig =
        serde_json::from_str(json).map_err(|e| CheckpointError::Config(e.to_string()))?;
    check_config(&cfg, text.len())?;

    let mut model = GdnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let (k, header) = lines
            .next()
            .ok_or_else(|| fmt_err(0, format!("missing parameter {}", model.params.name(id))))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 4 || parts[0] != "param" {
            return Err(fmt_err(k, "expected `param <name> <rows> <cols>`"));
        }
        if parts[1] != model.params.name(id) {
            return Err(fmt_err(
                k,
                format!(
                    "expected parameter {}, found {}",
                    model.params.name(id),
                    parts[1]
                ),
            ));
        }
        let rows: usize = parts[2].parse().map_err(|_| fmt_err(k, "bad row count"))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| fmt_err(k, "bad column count"))?;
        if model.params.value(id).dim() != (rows, cols) {
            return Err(fmt_err(
                k,
                format!("shape {rows}x{cols} does not match the config"),
            ));
        }
        let (k, data) = lines
            .next()
            .ok_or_else(|| fmt_err(k + 1, "missing parameter values"))?;
        let mut words = data.split_whitespace();
        let target = model.params.value_mut(id);
        for slot in target.iter_mut() {
            let w = words.next().ok_or_else(|| fmt_err(k, "too few values"))?;
            if w.len() != 16 {
                return Err(fmt_err(k, "values must be 16 hex digits"));
            }
            let bits = u64::from_str_radix(w, 16)
                .map_err(|_| fmt_err(k, format!("bad hex value `{w}`")))?;
            *slot = f64::from_bits(bits);
        }
        if words.next().is_some() {
            return Err(fmt_err(k, "too many values"));
        }
    }
    if let Some((k, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(fmt_err(
            k,
            format!(
                "unexpected trailing content `{}`",
                extra.chars().take(32).collect::<String>()
            ),
        ));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GdnModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GdnModel, CheckpointError> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}
