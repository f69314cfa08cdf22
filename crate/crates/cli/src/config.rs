use std::path::{Path, PathBuf};

use coam::geometry::RansacConfig;
use coam::net::NetworkConfig;
use coam::synth::{HomographyPairSpec, TwoViewSceneSpec};
use coam::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Everything a run needs. Every field has a default; the defaults describe
/// the desk-scale setup (64×64 images, 16-dimensional descriptors, batch 2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub ransac: RansacConfig,
    pub homography_data: HomographyPairSpec,
    pub twoview_data: TwoViewSceneSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            network: NetworkConfig::desk(),
            train: TrainConfig::desk(),
            ransac: RansacConfig::default(),
            homography_data: HomographyPairSpec::moderate(),
            twoview_data: TwoViewSceneSpec::default(),
            paths: Paths::default(),
        }
    }
}

/// Name of the resolved configuration written next to a checkpoint.
pub const RUN_FILE: &str = "run.toml";

impl RunConfig {
    /// Parses `text` on top of the defaults, so a partial section keeps the
    /// default values of the keys it omits.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).expect("run config serializes");
        merge(&mut merged, overlay);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| coam::Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.network.validate()?;
        self.train.validate()?;
        self.ransac.validate()?;
        self.homography_data.validate()?;
        self.twoview_data.validate()?;
        Ok(())
    }

    /// Explicit file, else `run.toml` beside `near` when present, else defaults.
    pub fn resolve(explicit: Option<&Path>, near: Option<&Path>) -> Result<Self, CliError> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Some(dir) = near.and_then(Path::parent) {
            let candidate = dir.join(RUN_FILE);
            if candidate.is_file() {
                return Self::load(&candidate);
            }
        }
        Ok(Self::default())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_and_partial_override() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let c = RunConfig::from_toml("seed = 7\n[train]\nlearning_rate = 0.001\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.batch_size, 2);
    }

    #[test]
    fn unknown_keys_and_invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("sede = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nmargin = -1.0\n").is_err());
    }
}
