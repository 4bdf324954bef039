use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xsdp_core::projection::synth::{default_labels, SynthConfig};
use xsdp_parser::{NetworkConfig, SharingTopology, TrainConfig};

/// Environment variable naming the configuration file used when `--config`
/// is absent.
pub const CONFIG_ENV: &str = "XSDP_CONFIG";

/// Everything a pipeline run can be configured with. Command-line flags
/// override the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides the seeds of every section when set.
    pub seed: Option<u64>,
    pub network: NetworkConfig,
    pub sharing: SharingTopology,
    pub train: TrainConfig,
    pub synth: SynthSection,
    pub paths: Paths,
}

/// Generator settings for `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub labels: Vec<String>,
    pub alignment_density: f64,
    pub syntactic_agreement: f64,
    pub edge_noise: f64,
    pub seed: u64,
    pub lexicon_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            sentences: d.sentence_count,
            min_len: d.min_len,
            max_len: d.max_len,
            labels: default_labels(),
            alignment_density: d.alignment_density,
            syntactic_agreement: d.syntactic_agreement,
            edge_noise: d.edge_noise,
            seed: d.seed,
            lexicon_seed: d.lexicon_seed,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            sentence_count: self.sentences,
            min_len: self.min_len,
            max_len: self.max_len,
            labels: self.labels.clone(),
            alignment_density: self.alignment_density,
            syntactic_agreement: self.syntactic_agreement,
            edge_noise: self.edge_noise,
            seed: self.seed,
            lexicon_seed: self.lexicon_seed,
        }
    }
}

/// Default input files of `train` and `parse`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub syntax: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.apply_seed();
        Ok(cfg)
    }

    /// Reads `explicit`, else the file named by [`CONFIG_ENV`], else the
    /// defaults.
    pub fn load(explicit: Option<&Path>) -> Result<PipelineConfig> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => {
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
                PipelineConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
            }
            None => Ok(PipelineConfig::default()),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.synth.seed = seed;
        }
    }

    /// Seed of parameter initialisation.
    pub fn init_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.sharing.validate()?;
        self.train.validate()?;
        self.synth.to_config().validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

/// Parses `--share rnn,fnn,taskrnn`; `none` or an empty list shares nothing.
pub fn parse_sharing(list: &str) -> Result<SharingTopology> {
    let mut t = SharingTopology::default();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "rnn" => t.shared_rnn = true,
            "fnn" => t.shared_fnn = true,
            "taskrnn" => t.task_rnn = true,
            "none" => {}
            other => bail!("unknown sharing option {other:?} (expected rnn, fnn, taskrnn or none)"),
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("colour = 3").is_err());
        assert!(PipelineConfig::parse("[network]\nd_x = 3").is_err());
        assert!(PipelineConfig::parse("[train]\nlearning_rate = 0.1").is_err());
    }

    #[test]
    fn top_level_seed_overrides_sections() {
        let cfg = PipelineConfig::parse("seed = 9\n[train]\nseed = 4\n[synth]\nseed = 5").unwrap();
        assert_eq!((cfg.train.seed, cfg.synth.seed, cfg.init_seed()), (9, 9, 9));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = PipelineConfig::parse("[network]\nd_w = 32\n[sharing]\nshared_rnn = true\n[train]\nmode = \"combined\"").unwrap();
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sharing_lists() {
        let t = parse_sharing("rnn,fnn").unwrap();
        assert!(t.shared_rnn && t.shared_fnn && !t.task_rnn);
        assert_eq!(parse_sharing("none").unwrap(), SharingTopology::default());
        assert!(parse_sharing("cnn").is_err());
    }
}
