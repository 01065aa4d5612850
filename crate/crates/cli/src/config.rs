use std::path::{Path, PathBuf};

use forge_core::eval::ExperimentConfig;
use forge_core::interleave::InterleaveConfig;
use forge_core::mixer::MixtureSpec;
use forge_core::quantizer::VqConfig;
use forge_core::rng::derive_seed;
use forge_core::text2token::ExpansionConfig;
use forge_core::tinylm::{LmConfig, TrainConfig};
use forge_core::{ForgeError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub shards: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

/// Shared run configuration. Component seeds inside the sections are
/// ignored: every stage derives its own seed from the global `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub interleave: InterleaveConfig,
    pub expansion: ExpansionConfig,
    pub vq: VqConfig,
    pub mixture: MixtureSpec,
    pub lm: LmConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

/// Stage tags for seed derivation.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Interleave = 1,
    Synth = 2,
    Vq = 3,
    Mixture = 4,
    Lm = 5,
    Train = 6,
    Experiment = 7,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            ForgeError::config(field_from_toml_error(&msg).unwrap_or_else(|| "config".into()), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        Self::parse(&text)
    }

    /// Eager check of every section.
    pub fn validate(&self) -> Result<()> {
        self.interleave.validate()?;
        self.expansion.validate()?;
        self.vq.validate()?;
        self.mixture.validate()?;
        self.lm.validate()?;
        self.train.validate()?;
        self.experiment.validate()?;
        if let Some(p) = &self.paths.corpus {
            if !p.exists() {
                return Err(ForgeError::config("paths.corpus", format!("{} does not exist", p.display())));
            }
        }
        for (i, s) in self.mixture.sources.iter().enumerate() {
            if let Some(p) = &s.path {
                if !Path::new(p).exists() {
                    return Err(ForgeError::config(
                        format!("mixture.sources[{i}].path"),
                        format!("{p} does not exist"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ForgeError::config("config", e.to_string()))
    }

    /// Flag (or `FORGE_SEED`, folded into the flag by the parser) wins over
    /// the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = flag.or(self.seed).ok_or_else(|| {
            ForgeError::config("seed", "required: pass --seed, set FORGE_SEED or put `seed` in the config")
        })?;
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed.unwrap_or(0), &[stage as u64])
    }
}

fn field_from_toml_error(msg: &str) -> Option<String> {
    // "unknown field `x`, expected ..." and "missing field `x`"
    let start = msg.find('`')?;
    let end = msg[start + 1..].find('`')?;
    Some(msg[start + 1..start + 1 + end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.interleave.eta, 0.3);
        assert_eq!(c.interleave.lambda, 10.0);
        assert_eq!(c.vq.ema_decay, 0.99);
        assert_eq!(c.vq.commitment_coeff, 10.0);
        assert_eq!(c.mixture.text_ratio, 0.3);
        assert_eq!(c.seed, None);
    }

    #[test]
    fn out_of_range_eta_names_field() {
        let e = RunConfig::parse("[interleave]\neta = 1.5\n").unwrap_err();
        match e {
            ForgeError::Config { field, message } => {
                assert_eq!(field, "interleave.eta");
                assert!(message.contains("(0, 1]"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = RunConfig::parse("[interleave]\netaa = 0.2\n").unwrap_err();
        assert!(matches!(e, ForgeError::Config { ref field, .. } if field == "etaa"), "{e}");
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = RunConfig::parse("seed = 4\n[interleave]\neta = 0.25\n[lm]\ndim = 32\nhead_dim = 8\n").unwrap();
        c.resolve_seed(Some(9)).unwrap();
        let again = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.seed, Some(9));
    }

    #[test]
    fn missing_seed_names_seed() {
        let mut c = RunConfig::default();
        let e = c.resolve_seed(None).unwrap_err();
        assert!(matches!(e, ForgeError::Config { ref field, .. } if field == "seed"));
    }
}
