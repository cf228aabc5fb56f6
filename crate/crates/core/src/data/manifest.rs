use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split `{s}`")))
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Clip path relative to the dataset root.
    pub path: String,
    pub label: u8,
    pub patient_id: String,
    pub split: Split,
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// `root/{clips/*.vclp, manifest.jsonl}`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub const MANIFEST: &'static str = "manifest.jsonl";
    pub const CLIP_DIR: &'static str = "clips";

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let records = read_manifest(root.join(Self::MANIFEST))?;
        Ok(Self { root, records })
    }

    /// Writes clips and manifest; `entries` pairs each clip with its split.
    pub fn create(root: impl Into<PathBuf>, entries: &[(Clip, Split)]) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(Self::CLIP_DIR))?;
        let mut records = Vec::with_capacity(entries.len());
        for (i, (clip, split)) in entries.iter().enumerate() {
            let rel = format!("{}/{i:05}_{}.vclp", Self::CLIP_DIR, clip.patient_id);
            clip.save(root.join(&rel))?;
            records.push(ManifestRecord {
                path: rel,
                label: clip.label,
                patient_id: clip.patient_id.clone(),
                split: *split,
            });
        }
        write_manifest(root.join(Self::MANIFEST), &records)?;
        Ok(Self { root, records })
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Clip>> {
        self.records(split)
            .map(|r| Clip::load(self.root.join(&r.path)))
            .collect()
    }
}
