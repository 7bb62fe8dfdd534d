//! Run configuration: one TOML file drives a whole pipeline run.
//!
//! Parsing is strict at every level (unknown keys are errors) so a typo'd
//! hyperparameter cannot silently fall back to a default. The effective
//! config, after command-line overrides, is hashed; every artifact embeds
//! that digest so outputs can be traced back to the exact settings that
//! produced them.

use std::path::{Path, PathBuf};

use pbglm::dataset::{CandidateSpec, SplitMode, SynthSpec};
use pbglm::glm::ModelKind;
use pbglm::trainer::FitConfig;
use pbglm::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub results: Option<PathBuf>,
    pub voters: Option<PathBuf>,
    pub feature_spec: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Binary dataset cache; defaults to `<out_dir>/dataset.bin`.
    pub dataset_cache: Option<PathBuf>,
}

impl PathsConfig {
    pub fn cache_path(&self) -> PathBuf {
        self.dataset_cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("dataset.bin"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logistic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::Precinct,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub landslide: bool,
    pub landslide_threshold: f64,
    pub primary: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            landslide: true,
            landslide_threshold: 0.9,
            primary: true,
        }
    }
}

/// The full run configuration. Sections a command does not need may be
/// omitted; commands error with a pointed message when a section they do
/// need is missing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Option<PathsConfig>,
    pub candidates: Option<CandidateSpec>,
    pub model: ModelSection,
    pub fit: FitConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub synthetic: Option<SynthSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileOpen {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(s) = &config.synthetic {
            s.validate()?;
        }
        config.fit.validate()?;
        Ok(config)
    }

    /// Applies command-line overrides: `--seed` retargets every seed in the
    /// run (fit, split, and synthesis stay a single-knob reproduction),
    /// `--out` replaces the output directory.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(seed) = seed {
            self.fit.seed = seed;
            self.split.seed = seed;
        }
        if let Some(out) = out {
            match &mut self.paths {
                Some(p) => p.out_dir = out.to_path_buf(),
                None => {
                    self.paths = Some(PathsConfig {
                        results: None,
                        voters: None,
                        feature_spec: None,
                        out_dir: out.to_path_buf(),
                        dataset_cache: None,
                    })
                }
            }
        }
    }

    pub fn paths(&self) -> Result<&PathsConfig> {
        self.paths
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config is missing the [paths] section".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        Ok(&self.paths()?.out_dir)
    }

    /// Digest of the effective configuration (after overrides), embedded in
    /// every artifact. Hashes the canonical JSON serialization so formatting
    /// and key order in the source TOML do not matter.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config always serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.model.kind, ModelKind::Logistic);
        assert_eq!(config.split.train_frac, 0.8);
        assert!(config.eval.landslide);
        assert_eq!(config.fit, FitConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[fit]\nbogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[split]\nbogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[paths]\nout_dir = 'x'\nbogus = 1").is_err());
    }

    #[test]
    fn digest_changes_with_content_and_overrides() {
        let mut a: RunConfig = toml::from_str("[fit]\nseed = 1").unwrap();
        let b: RunConfig = toml::from_str("[fit]\nseed = 2").unwrap();
        assert_ne!(a.digest(), b.digest());

        let before = a.digest();
        a.apply_overrides(Some(99), None);
        assert_ne!(a.digest(), before);
        assert_eq!(a.fit.seed, 99);
        assert_eq!(a.split.seed, 99);

        // Same effective config, same digest.
        let mut c: RunConfig = toml::from_str("[fit]\nseed = 2").unwrap();
        c.apply_overrides(Some(99), None);
        assert_eq!(a.digest(), c.digest());
    }

    #[test]
    fn out_override_creates_paths_section() {
        let mut config: RunConfig = toml::from_str("").unwrap();
        assert!(config.paths.is_none());
        config.apply_overrides(None, Some(Path::new("/tmp/artifacts")));
        assert_eq!(config.out_dir().unwrap(), Path::new("/tmp/artifacts"));
    }
}
