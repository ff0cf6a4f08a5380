//! Parameter checkpoints: a JSON manifest next to one binary file per model.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! b"EQFL"  u32 version  u32 layers  (u32 in_dim, u32 out_dim) * layers
//! then per layer: weights (out_dim x in_dim, row-major) as f64, bias as f64
//! ```

use std::path::{Path, PathBuf};

use equifl_core::{LayerParams, Mode, ModelParams};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::Encoder;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EQFL";
pub const BIN_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "equifl-checkpoint";
pub const MANIFEST_FILE: &str = "checkpoint.json";

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * params.layers.len() + 8 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
    }
    for l in &params.layers {
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let b = self.take(n.checked_mul(8)?)?;
        Some(
            b.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err("bad magic".into());
    }
    let version = c.u32().ok_or("truncated header")?;
    if version != BIN_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n = c.u32().ok_or("truncated header")? as usize;
    let mut shapes = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let i = c.u32().ok_or("truncated shape header")? as usize;
        let o = c.u32().ok_or("truncated shape header")? as usize;
        shapes.push((i, o));
    }
    let mut layers = Vec::with_capacity(n);
    for (in_dim, out_dim) in shapes {
        let weights = c
            .f64s(in_dim.checked_mul(out_dim).ok_or("shape overflow")?)
            .ok_or("truncated weights")?;
        let bias = c.f64s(out_dim).ok_or("truncated bias")?;
        layers.push(LayerParams {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    ModelParams::new(layers).map_err(|e| e.to_string())
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    crate::report::write_file(path, &encode_params(params))
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub file: String,
    /// `[in_dim, out_dim]` per layer.
    pub shapes: Vec<[usize; 2]>,
}

impl ModelEntry {
    fn of(file: String, params: &ModelParams) -> Self {
        ModelEntry {
            file,
            shapes: params.layers.iter().map(|l| [l.in_dim, l.out_dim]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub round: usize,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub encoder: Encoder,
    pub global: ModelEntry,
    /// Each client's own parameters, by client id.
    pub clients: Vec<ModelEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub global: ModelParams,
    pub clients: Vec<ModelParams>,
}

impl Checkpoint {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_params(&dir.join(&self.manifest.global.file), &self.global)?;
        for (entry, params) in self.manifest.clients.iter().zip(&self.clients) {
            write_params(&dir.join(&entry.file), params)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("checkpoint manifest serializes");
        json.push('\n');
        crate::report::write_file(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                path,
                message: format!(
                    "expected format `{CHECKPOINT_FORMAT}`, found `{}`",
                    manifest.format
                ),
            });
        }
        let load = |e: &ModelEntry| -> Result<ModelParams> {
            let file = dir.join(&e.file);
            let p = read_params(&file)?;
            let shapes: Vec<[usize; 2]> = p.layers.iter().map(|l| [l.in_dim, l.out_dim]).collect();
            if shapes != e.shapes {
                return Err(Error::Format {
                    path: file,
                    message: "layer shapes differ from the checkpoint manifest".into(),
                });
            }
            Ok(p)
        };
        let global = load(&manifest.global)?;
        let clients = manifest.clients.iter().map(load).collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            manifest,
            global,
            clients,
        })
    }
}

/// Checkpoint of a finished run.
pub fn from_run(run: &crate::experiment::RunOutput, encoder: &Encoder) -> Checkpoint {
    let cfg = &run.config;
    let round = run.final_report().round;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: run.seed,
        round,
        mode: cfg.train.mode,
        config: cfg.clone(),
        encoder: encoder.clone(),
        global: ModelEntry::of("global.bin".into(), &run.outcome.global),
        clients: run
            .outcome
            .locals
            .iter()
            .enumerate()
            .map(|(i, p)| ModelEntry::of(format!("client-{i:03}.bin"), p))
            .collect(),
    };
    Checkpoint {
        manifest,
        global: run.outcome.global.clone(),
        clients: run.outcome.locals.clone(),
    }
}
