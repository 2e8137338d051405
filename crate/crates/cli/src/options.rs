use std::fs;
use std::path::Path;

use ctgeo::align::AlignConfig;
use ctgeo::net::{ModelConfig, TrainConfig};
use ctgeo::scene::SceneConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ctgeo::Error),
    /// A check ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = Result<T, CliError>;

/// Every configurable option, addressed as `section.key`.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub align: AlignConfig,
}

impl Settings {
    /// Defaults, then the `key=value` file, then `--set` overrides.
    pub fn load(file: Option<&Path>, sets: &[String]) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Core(ctgeo::Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            })?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                s.apply(line)
                    .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
            }
        }
        for kv in sets {
            s.apply(kv)?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, kv: &str) -> CliResult<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected section.key=value, got {kv:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| CliError::Usage(format!("option {key:?} needs a section (scene, model, train, align)")))?;
        let r = match section {
            "scene" => self.scene.set(name, value),
            "model" => self.model.set(name, value),
            "train" => self.train.set(name, value),
            "align" => self.align.set(name, value),
            _ => return Err(CliError::Usage(format!("unknown section {section:?} in {key:?}"))),
        };
        r.map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad {what} {p:?} in {s:?}")))
        })
        .collect()
}
