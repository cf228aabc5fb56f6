//! Config files with flat `section.key` names, layered over command-line
//! flags. Top-level keys are the global options; `synth.n_train = 64` (or
//! `n_train = 64` under `[synth]`) sets a command option. File values win
//! over flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT: &str = "resolved_config.toml";

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, toml::Value>,
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config file is not valid TOML")?;
        let mut values = BTreeMap::new();
        flatten("", table, &mut values);
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Rejects keys outside the known sections.
    pub fn check_sections(&self, sections: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if let Some((section, _)) = key.split_once('.') {
                if !sections.contains(&section) {
                    bail!("config key `{key}`: unknown section `{section}`");
                }
            }
        }
        Ok(())
    }

    /// Keys of one section with the prefix removed. The empty section holds
    /// the top-level keys.
    fn section<'a>(
        &'a self,
        name: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a toml::Value)> + 'a {
        self.values.iter().filter_map(move |(k, v)| {
            if name.is_empty() {
                (!k.contains('.')).then_some((k.as_str(), v))
            } else {
                k.strip_prefix(name)
                    .and_then(|rest| rest.strip_prefix('.'))
                    .map(|rest| (rest, v))
            }
        })
    }

    /// `flags` with every key of `section` overwritten from the file.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, section: &str, flags: &T) -> Result<T> {
        let mut table = toml::Table::try_from(flags).context("serializing flags")?;
        let mut touched = Vec::new();
        for (k, v) in self.section(section) {
            table.insert(k.to_string(), v.clone());
            touched.push(k);
        }
        let merged: T = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("config section `{section}`"))?;
        let known = toml::Table::try_from(&merged)?;
        if let Some(k) = touched.iter().find(|k| !known.contains_key(**k)) {
            let shown = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            bail!("unknown config key `{shown}`");
        }
        Ok(merged)
    }
}

/// Global options shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize, clap::Args)]
pub struct Global {
    /// Base seed for data, initialisation, masking and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory (written by `synth`, read by the others).
    #[arg(long, global = true, default_value = "data")]
    pub data_root: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// TOML file of flat `section.key` settings; overrides flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Writes `resolved_config.toml` into `dir`: the globals at top level and
/// the command's options under `[section]`.
pub fn write_snapshot<T: Serialize>(
    dir: &Path,
    global: &Global,
    section: &str,
    opts: &T,
) -> Result<()> {
    let mut root = toml::Table::try_from(global)?;
    root.insert(section.to_string(), toml::Value::try_from(opts)?);
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SNAPSHOT), toml::to_string(&root)?)?;
    Ok(())
}
