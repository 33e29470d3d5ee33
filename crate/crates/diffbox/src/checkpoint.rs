//! Plain-text checkpoint files.
//!
//! ```text
//! diffbox-checkpoint 1
//! meta {"num_stages":2,...}
//! step 1500
//! param stage0.fc1.weight 113 128
//! value <row-major values>
//! m <first moments>
//! v <second moments>
//! param ...
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use diffbox_core::corruption::PaddingStrategy;
use diffbox_core::denoiser::{Decoder, DecoderConfig};
use diffbox_core::neural::{Param, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

const MAGIC: &str = "diffbox-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("checkpoint: {0}")]
    Model(#[from] diffbox_core::Error),
}

/// Everything besides the parameters needed to reuse a trained decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub num_stages: usize,
    pub hidden_dim: usize,
    pub pool_size: usize,
    pub num_classes: usize,
    pub timestep_dim: usize,
    pub feature_channels: usize,
    pub timesteps: usize,
    pub scale: f64,
    pub padding: String,
    pub n_train: usize,
    pub grid_size: usize,
    pub epochs: usize,
}

impl CheckpointMeta {
    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            num_stages: self.num_stages,
            hidden_dim: self.hidden_dim,
            pool_size: self.pool_size,
            num_classes: self.num_classes,
            timestep_dim: self.timestep_dim,
            feature_channels: self.feature_channels,
        }
    }

    pub fn padding(&self) -> Option<PaddingStrategy> {
        PaddingStrategy::from_name(&self.padding)
    }
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").expect("writing to a string");
    }
    s
}

pub fn to_text(decoder: &Decoder, meta: &CheckpointMeta) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("meta {}\n", serde_json::to_string(meta).expect("meta serializes")));
    out.push_str(&format!("step {}\n", decoder.params().step()));
    for (_, p) in decoder.params().iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        out.push_str(&format!("param {} {}\n", p.name, dims.join(" ")));
        out.push_str(&format!("value {}\n", join(p.value.data())));
        out.push_str(&format!("m {}\n", join(p.m.data())));
        out.push_str(&format!("v {}\n", join(p.v.data())));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_tagged(&mut self, tag: &str) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                let (head, rest) = l.split_once(' ').unwrap_or((l, ""));
                if head == tag {
                    Ok(rest)
                } else {
                    Err(self.err(format!("expected `{tag}`, found `{head}`")))
                }
            }
            None => Err(CheckpointError::Format { line: self.line + 1, detail: format!("missing `{tag}` line") }),
        }
    }

    fn err(&self, detail: String) -> CheckpointError {
        CheckpointError::Format { line: self.line, detail }
    }

    fn values(&mut self, tag: &str, shape: &[usize]) -> Result<Tensor, CheckpointError> {
        let rest = self.next_tagged(tag)?;
        let data = rest
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| self.err(format!("bad number `{t}`: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        Tensor::new(shape.to_vec(), data).map_err(|e| self.err(e.to_string()))
    }
}

pub fn from_text(text: &str) -> Result<(Decoder, CheckpointMeta), CheckpointError> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    match lines.inner.next() {
        Some((_, l)) if l == MAGIC => lines.line = 1,
        _ => return Err(CheckpointError::Format { line: 1, detail: format!("expected `{MAGIC}` header") }),
    }
    let meta: CheckpointMeta = {
        let rest = lines.next_tagged("meta")?;
        serde_json::from_str(rest).map_err(|e| lines.err(format!("bad meta: {e}")))?
    };
    let step: u64 = {
        let rest = lines.next_tagged("step")?;
        rest.trim().parse().map_err(|e| lines.err(format!("bad step: {e}")))?
    };
    let mut store = ParamStore::new();
    while let Some((i, l)) = lines.inner.next() {
        lines.line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let mut parts = l.split_ascii_whitespace();
        if parts.next() != Some("param") {
            return Err(lines.err(format!("expected `param`, found `{l}`")));
        }
        let name = parts.next().ok_or_else(|| lines.err("parameter without a name".into()))?.to_string();
        let shape = parts
            .map(|d| d.parse::<usize>().map_err(|e| lines.err(format!("bad dimension `{d}`: {e}"))))
            .collect::<Result<Vec<usize>, _>>()?;
        if store.id(&name).is_some() {
            return Err(lines.err(format!("duplicate parameter {name}")));
        }
        let value = lines.values("value", &shape)?;
        let m = lines.values("m", &shape)?;
        let v = lines.values("v", &shape)?;
        store.insert(Param { name, grad: Tensor::zeros(&shape), value, m, v });
    }
    store.set_step(step);
    let decoder = Decoder::from_params(meta.decoder_config(), store)?;
    Ok((decoder, meta))
}

pub fn save_checkpoint(path: &Path, decoder: &Decoder, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    fs::write(path, to_text(decoder, meta)).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(Decoder, CheckpointMeta), CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffbox_core::rng;

    fn meta() -> CheckpointMeta {
        let c = DecoderConfig { hidden_dim: 8, timestep_dim: 4, ..DecoderConfig::for_classes(2) };
        CheckpointMeta {
            num_stages: c.num_stages,
            hidden_dim: c.hidden_dim,
            pool_size: c.pool_size,
            num_classes: c.num_classes,
            timestep_dim: c.timestep_dim,
            feature_channels: c.feature_channels,
            timesteps: 1000,
            scale: 2.0,
            padding: "cat-gaussian".into(),
            n_train: 16,
            grid_size: 16,
            epochs: 3,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = meta();
        let mut dec = Decoder::new(m.decoder_config(), &mut rng::seeded(1)).unwrap();
        dec.params_mut().set_step(42);
        let text = to_text(&dec, &m);
        let (back, back_meta) = from_text(&text).unwrap();
        assert_eq!(back_meta, m);
        assert_eq!(back, dec);
        assert_eq!(to_text(&back, &back_meta), text);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let m = meta();
        let dec = Decoder::new(m.decoder_config(), &mut rng::seeded(1)).unwrap();
        let text = to_text(&dec, &m);
        assert!(from_text("not a checkpoint").is_err());
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text(&cut), Err(CheckpointError::Format { .. })));
        let bad = text.replacen("value 0", "value x", 1);
        assert!(from_text(&bad).is_err());
        let missing: String = text.lines().take(text.lines().count() - 4).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text(&missing), Err(CheckpointError::Model(_))));
    }
}
