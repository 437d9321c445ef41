//! Versioned text checkpoints for [`Network`].
//!
//! The format is line-oriented: a version header, run metadata (config hash
//! and seed), the tap set, then one block per layer with weights dumped
//! row-major in shortest-round-trip decimal. Serialization is canonical, so
//! identical networks produce byte-identical files, and parsing restores the
//! exact parameter bits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{format_f64, parse_csv_fields, Matrix};
use crate::net::{AffineLayer, Layer, Network};

const MAGIC: &str = "deep-coral-checkpoint v1";

/// Run metadata embedded in every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Hex hash of the canonical experiment config, or `-` when the network
    /// was saved outside an experiment run.
    pub config_hash: String,
    pub seed: u64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            config_hash: "-".to_string(),
            seed: 0,
        }
    }
}

/// Renders the network and metadata as checkpoint text.
pub fn checkpoint_string(net: &Network, meta: &CheckpointMeta) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("config_hash={}\n", meta.config_hash));
    out.push_str(&format!("seed={}\n", meta.seed));
    let taps: Vec<String> = net.coral_taps().iter().map(|t| t.to_string()).collect();
    out.push_str(&format!("taps={}\n", taps.join(",")));
    out.push_str(&format!("layers={}\n", net.num_layers()));
    for layer in net.layers() {
        match layer {
            Layer::Affine(a) => {
                out.push_str(&format!(
                    "layer=affine in={} out={} lr_mult={}\n",
                    a.in_dim(),
                    a.out_dim(),
                    format_f64(a.lr_multiplier)
                ));
                out.push_str(&a.weights.to_csv());
                let bias: Vec<String> = a.bias.iter().map(|&v| format_f64(v)).collect();
                out.push_str(&format!("bias={}\n", bias.join(",")));
            }
            Layer::Relu => out.push_str("layer=relu\n"),
        }
    }
    out
}

/// Saves the checkpoint to `path`.
pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_string(net, meta))?;
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, line)| (i + 1, line))
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: "unexpected end of checkpoint".to_string(),
            })
    }
}

fn expect_key<'a>(line: &'a str, key: &str, line_no: usize) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `{key}=...`, got {line:?}"),
        })
}

fn parse_usize(text: &str, line_no: usize) -> Result<usize> {
    text.trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("invalid integer {text:?}"),
    })
}

/// Parses checkpoint text back into a network and its metadata.
pub fn parse_checkpoint(text: &str) -> Result<(Network, CheckpointMeta)> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };

    let (no, magic) = lines.next_line()?;
    if magic != MAGIC {
        return Err(Error::Parse {
            line: no,
            message: format!("unrecognized checkpoint header {magic:?}"),
        });
    }

    let (no, line) = lines.next_line()?;
    let config_hash = expect_key(line, "config_hash", no)?.to_string();
    let (no, line) = lines.next_line()?;
    let seed: u64 = expect_key(line, "seed", no)?
        .trim()
        .parse()
        .map_err(|_| Error::Parse {
            line: no,
            message: "invalid seed".to_string(),
        })?;

    let (no, line) = lines.next_line()?;
    let taps_text = expect_key(line, "taps", no)?;
    let taps: Vec<usize> = if taps_text.is_empty() {
        Vec::new()
    } else {
        taps_text
            .split(',')
            .map(|t| parse_usize(t, no))
            .collect::<Result<_>>()?
    };

    let (no, line) = lines.next_line()?;
    let num_layers = parse_usize(expect_key(line, "layers", no)?, no)?;
    if num_layers == 0 {
        return Err(Error::Parse {
            line: no,
            message: "checkpoint declares zero layers".to_string(),
        });
    }

    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let (no, line) = lines.next_line()?;
        let decl = expect_key(line, "layer", no)?;
        if decl == "relu" {
            layers.push(Layer::Relu);
            continue;
        }
        let mut in_dim = None;
        let mut out_dim = None;
        let mut lr_mult = None;
        let mut parts = decl.split_whitespace();
        if parts.next() != Some("affine") {
            return Err(Error::Parse {
                line: no,
                message: format!("unknown layer kind in {decl:?}"),
            });
        }
        for part in parts {
            if let Some(v) = part.strip_prefix("in=") {
                in_dim = Some(parse_usize(v, no)?);
            } else if let Some(v) = part.strip_prefix("out=") {
                out_dim = Some(parse_usize(v, no)?);
            } else if let Some(v) = part.strip_prefix("lr_mult=") {
                lr_mult = Some(v.parse::<f64>().map_err(|_| Error::Parse {
                    line: no,
                    message: format!("invalid lr_mult {v:?}"),
                })?);
            }
        }
        let (in_dim, out_dim, lr_multiplier) = match (in_dim, out_dim, lr_mult) {
            (Some(i), Some(o), Some(m)) => (i, o, m),
            _ => {
                return Err(Error::Parse {
                    line: no,
                    message: "affine layer needs in=, out=, lr_mult=".to_string(),
                })
            }
        };

        let mut rows = Vec::with_capacity(in_dim);
        for _ in 0..in_dim {
            let (no, line) = lines.next_line()?;
            let row = parse_csv_fields(line, no)?;
            if row.len() != out_dim {
                return Err(Error::Parse {
                    line: no,
                    message: format!("expected {out_dim} weights, got {}", row.len()),
                });
            }
            rows.push(row);
        }
        let weights = Matrix::from_rows(&rows)?;

        let (no, line) = lines.next_line()?;
        let bias = parse_csv_fields(expect_key(line, "bias", no)?, no)?;
        if bias.len() != out_dim {
            return Err(Error::Parse {
                line: no,
                message: format!("expected {out_dim} bias values, got {}", bias.len()),
            });
        }

        layers.push(Layer::Affine(AffineLayer {
            weights,
            bias,
            lr_multiplier,
        }));
    }

    let net = Network::from_parts(layers, &taps)?;
    Ok((net, CheckpointMeta { config_hash, seed }))
}

/// Loads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text)
}
