//! Experiment configuration: a sectioned `key = value` file (TOML syntax).
//! Every key is optional; missing keys take the desk-scale defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::Snr;
use crate::coop::TrainConfig;
use crate::corpus::SplitSpec;
use crate::error::HarnessError;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Tclsc,
    SelftrainA,
    SelftrainB,
    Classic,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Tclsc => "tclsc",
            Scheme::SelftrainA => "selftrain_a",
            Scheme::SelftrainB => "selftrain_b",
            Scheme::Classic => "classic",
        }
    }

    pub fn is_learned(self) -> bool {
        self != Scheme::Classic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub source: CorpusSource,
    /// Text file, one sentence per line; used when `source = "file"`.
    pub path: Option<PathBuf>,
    /// Total sentences for the synthetic generator.
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_freq: usize,
    /// Vocabulary cap, special tokens included.
    pub vocab_max: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { source: CorpusSource::Synthetic, path: None, sentences: 5000, min_len: 4, max_len: 30, min_freq: 1, vocab_max: 256 }
    }
}

/// A named partition of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub public: f64,
    pub a: f64,
    pub b: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// `"case1"`, `"case2"` or the name of an entry in `custom`.
    pub cases: Vec<String>,
    pub custom: Vec<CaseSpec>,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { cases: vec!["case1".into()], custom: Vec::new(), seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub symbols_per_token: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::micro(0);
        Self { d_model: m.d_model, symbols_per_token: m.symbols_per_token, layers: m.layers, heads: m.heads, d_ff: m.d_ff }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub snr_db: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let Snr::Db(snr_db) = t.snr else { unreachable!() };
        Self { epochs: t.epochs, warmup_epochs: t.warmup_epochs, batch_size: t.batch_size, lr: t.lr, snr_db }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundsSection {
    /// Round counts swept by `round-sweep`.
    pub list: Vec<usize>,
    /// Round count used by `snr-sweep` and `baseline`.
    pub rounds: usize,
    /// Test SNR for `round-sweep` scores.
    pub eval_snr_db: f64,
    /// Plateau tolerance: the smallest R within `delta` of the best score.
    pub plateau_delta: f64,
}

impl Default for RoundsSection {
    fn default() -> Self {
        Self { list: vec![1, 4, 8, 10, 20, 40], rounds: 8, eval_snr_db: 15.0, plateau_delta: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub snr_db: Vec<f64>,
    /// Base seed of the evaluation noise streams.
    pub noise_seed: u64,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { snr_db: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0], noise_seed: 77, batch_size: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicSection {
    pub rs_n: usize,
    pub rs_k: usize,
}

impl Default for ClassicSection {
    fn default() -> Self {
        Self { rs_n: 255, rs_k: 223 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    /// Run each party on its own thread.
    pub concurrent: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            schemes: vec![Scheme::Tclsc, Scheme::SelftrainA, Scheme::SelftrainB, Scheme::Classic],
            threads: 0,
            out: PathBuf::from("results"),
            concurrent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub rounds: RoundsSection,
    pub eval: EvalSection,
    pub classic: ClassicSection,
    pub run: RunSection,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative corpus paths resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (&cfg.corpus.path, path.parent()) {
            if p.is_relative() {
                cfg.corpus.path = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization; its SHA-256 is the config hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let c = &self.corpus;
        if c.source == CorpusSource::File {
            let p = c.path.as_ref().ok_or_else(|| config_err("corpus.source = \"file\" needs corpus.path"))?;
            if !p.is_file() {
                return Err(config_err(format!("corpus file {} does not exist", p.display())));
            }
        }
        if c.min_len == 0 || c.max_len < c.min_len {
            return Err(config_err("corpus needs 1 <= min_len <= max_len"));
        }
        if c.vocab_max <= crate::corpus::NUM_SPECIALS {
            return Err(config_err("corpus.vocab_max must exceed the special tokens"));
        }
        if self.split.cases.is_empty() {
            return Err(config_err("split.cases is empty"));
        }
        for name in &self.split.cases {
            self.split_spec(name)?.validate()?;
        }
        if self.run.seeds.is_empty() {
            return Err(config_err("run.seeds is empty"));
        }
        if self.run.schemes.is_empty() {
            return Err(config_err("run.schemes is empty"));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.lr.is_nan() || t.lr <= 0.0 || !t.snr_db.is_finite() {
            return Err(config_err("train needs epochs >= 1, batch_size >= 1, lr > 0 and a finite snr_db"));
        }
        for &r in self.rounds.list.iter().chain([&self.rounds.rounds]) {
            if r > t.epochs {
                return Err(config_err(format!("{r} rounds exceed {} epochs", t.epochs)));
            }
        }
        if self.rounds.list.is_empty() {
            return Err(config_err("rounds.list is empty"));
        }
        if self.eval.snr_db.is_empty() || self.eval.snr_db.iter().any(|s| !s.is_finite()) || !self.rounds.eval_snr_db.is_finite() {
            return Err(config_err("evaluation SNRs must be finite and eval.snr_db nonempty"));
        }
        if self.eval.batch_size == 0 {
            return Err(config_err("eval.batch_size must be >= 1"));
        }
        self.model_config(c.vocab_max)
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        crate::classic::rs::RsCode::new(self.classic.rs_n, self.classic.rs_k).map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn split_spec(&self, case: &str) -> Result<SplitSpec, HarnessError> {
        let seed = self.split.seed;
        match case {
            "case1" => Ok(SplitSpec::case1(seed)),
            "case2" => Ok(SplitSpec::case2(seed)),
            other => self
                .split
                .custom
                .iter()
                .find(|c| c.name == other)
                .map(|c| SplitSpec { frac_public: c.public, frac_a: c.a, frac_b: c.b, frac_test: c.test, seed })
                .ok_or_else(|| config_err(format!("unknown case {other:?}"))),
        }
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab,
            max_len: self.corpus.max_len + 1,
            d_model: m.d_model,
            symbols_per_token: m.symbols_per_token,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig { epochs: t.epochs, warmup_epochs: t.warmup_epochs, batch_size: t.batch_size, lr: t.lr, snr: Snr::Db(t.snr_db) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.rounds.list, vec![1, 4, 8, 10, 20, 40]);
        assert_eq!(c.eval.snr_db.len(), 7);
        assert_eq!(c.train.epochs, 80);
    }

    #[test]
    fn sections_override() {
        let c = ExperimentConfig::from_toml(
            "[train]\nepochs = 12\n[rounds]\nlist = [1, 3]\nrounds = 3\n[run]\nseeds = [9]\nschemes = [\"tclsc\", \"classic\"]\n",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 12);
        assert_eq!(c.run.seeds, vec![9]);
        assert_eq!(c.run.schemes, vec![Scheme::Tclsc, Scheme::Classic]);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "[run]\nseeds = []",
            "[run]\nschemes = []",
            "[train]\nepochs = 4\n[rounds]\nlist = [8]\nrounds = 2",
            "[split]\ncases = [\"case9\"]",
            "[corpus]\nsource = \"file\"\npath = \"/definitely/not/here.txt\"",
            "[model]\nheads = 3",
            "[classic]\nrs_n = 300",
            "[bogus]\nx = 1",
            "[train]\nepochs = \"many\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn custom_case() {
        let c = ExperimentConfig::from_toml(
            "[split]\ncases = [\"skew\"]\n[[split.custom]]\nname = \"skew\"\npublic = 0.1\na = 0.7\nb = 0.1\ntest = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.split_spec("skew").unwrap().frac_a, 0.7);
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
