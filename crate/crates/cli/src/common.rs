use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use viact_core::data::{Clip, Dataset, Split};
use viact_core::mae::MaeConfig;
use viact_core::model::{ModelConfig, TokenSource};
use viact_core::tensor::checkpoint::{self, Checkpoint, GraphKind};
use viact_core::ParamStore;

/// Everything needed to rebuild the graph a checkpoint was saved from.
/// Stored next to the checkpoint with a `.json` extension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub graph: String,
    pub model: ModelConfig,
    pub mae: Option<MaeConfig>,
    pub source: TokenSource,
}

impl Sidecar {
    pub const PRETRAIN: &'static str = "pretrain";
    pub const CLASSIFIER: &'static str = "classifier";
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>, sidecar: &Sidecar) -> Result<()> {
    let kind = match sidecar.graph.as_str() {
        Sidecar::PRETRAIN => GraphKind::Pretrain,
        _ => GraphKind::Classifier,
    };
    checkpoint::save(path, store, kind)?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Sidecar)> {
    let ckpt = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_slice(
        &fs::read(&side).with_context(|| format!("reading {}", side.display()))?,
    )?;
    let expect = match sidecar.graph.as_str() {
        Sidecar::PRETRAIN => GraphKind::Pretrain,
        _ => GraphKind::Classifier,
    };
    if ckpt.kind != expect {
        bail!(
            "{} holds a {:?} graph but its sidecar says {}",
            path.display(),
            ckpt.kind,
            sidecar.graph
        );
    }
    Ok((ckpt, sidecar))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Line-buffered JSONL writer, flushed per record.
pub struct Jsonl {
    w: BufWriter<File>,
}

impl Jsonl {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            w: BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            ),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            w: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.w, value)?;
        self.w.write_all(b"\n")?;
        self.w.flush()
    }
}

/// `[train, val, test]` clips of the dataset at `root`.
pub fn load_splits(root: &Path) -> Result<[Vec<Clip>; 3]> {
    let ds = Dataset::open(root).with_context(|| format!("opening dataset {}", root.display()))?;
    let load = |s| {
        ds.load_split(s)
            .with_context(|| format!("loading {s} split"))
    };
    Ok([load(Split::Train)?, load(Split::Val)?, load(Split::Test)?])
}

/// Clip length shared by every clip.
pub fn clip_len(clips: &[Clip]) -> Result<usize> {
    let Some(first) = clips.first() else {
        bail!("no clips");
    };
    let t = first.num_frames();
    if clips.iter().any(|c| c.num_frames() != t) {
        bail!("clips have different lengths");
    }
    Ok(t)
}

pub fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}
