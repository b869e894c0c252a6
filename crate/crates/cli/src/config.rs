//! Resolved run configuration.
//!
//! Values come from, in increasing precedence: built-in defaults, a TOML
//! config file (`--config`), the `GENREPROBE_CACHE` environment variable (the
//! feature root only), and command-line flags. Every command writes the
//! merged result next to its outputs so the run can be repeated from it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use genreprobe::dataset::FoldProtocol;
use genreprobe::framing::FrameSpec;
use genreprobe::mlp::TrainConfig;
use serde::{Deserialize, Serialize};

pub const CACHE_ENV: &str = "GENREPROBE_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Built-in log-mel filterbank.
    #[default]
    Logmel,
    /// Exported ONNX encoder.
    Model,
    /// Features already stored as `.gpf` files.
    Precomputed,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Logmel => "logmel",
            Self::Model => "model",
            Self::Precomputed => "precomputed",
        })
    }
}

/// `all` or a comma-separated list of layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSelection {
    #[default]
    All,
    List(Vec<u16>),
}

impl FromStr for LayerSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        let layers = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u16>()
                    .map_err(|_| format!("bad layer {p:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if layers.is_empty() {
            return Err("empty layer list".into());
        }
        Ok(Self::List(layers))
    }
}

impl TryFrom<String> for LayerSelection {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LayerSelection> for String {
    fn from(l: LayerSelection) -> String {
        l.to_string()
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::List(l) => {
                let parts: Vec<String> = l.iter().map(u16::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl LayerSelection {
    /// Concrete layers, with `all` standing for `available`.
    pub fn resolve(&self, available: &[u16]) -> Vec<u16> {
        match self {
            Self::All => available.to_vec(),
            Self::List(l) => l.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Root of the feature store.
    pub features: PathBuf,
    /// Directory for reports, splits and trained heads.
    pub output: PathBuf,
    pub backend: Backend,
    /// ONNX file for the `model` backend.
    pub model: Option<PathBuf>,
    /// Feature root read by the `precomputed` backend.
    pub source: Option<PathBuf>,
    /// Name under which features are stored; derived from the backend when
    /// unset.
    pub model_id: Option<String>,
    pub layers: LayerSelection,
    pub n_mels: usize,
    pub frame: FrameSpec,
    pub folds_seed: u64,
    pub protocol: FoldProtocol,
    pub train: TrainConfig,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            features: PathBuf::from("features"),
            output: PathBuf::from("results"),
            backend: Backend::Logmel,
            model: None,
            source: None,
            model_id: None,
            layers: LayerSelection::All,
            n_mels: 64,
            frame: FrameSpec::default(),
            folds_seed: 0,
            protocol: FoldProtocol::Rotation,
            train: TrainConfig::default(),
            jobs: 1,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and the environment.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Self::default(),
        };
        if let Some(root) = env(CACHE_ENV).filter(|v| !v.is_empty()) {
            cfg.features = PathBuf::from(root);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.train.validate()?;
        if self.n_mels == 0 {
            bail!("n_mels must be positive");
        }
        Ok(())
    }

    /// The store name for the configured backend.
    pub fn default_model_id(&self) -> Option<String> {
        match (&self.model_id, self.backend) {
            (Some(id), _) => Some(id.clone()),
            (None, Backend::Logmel) => Some(format!("logmel{}", self.n_mels)),
            (None, _) => None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}
