//! Run configuration in TOML.
//!
//! Every section and field is optional; an empty file is the default
//! two-spirals FSG run. Unknown keys are rejected. [`RunConfig::to_canonical`]
//! writes every field in declaration order, so load → save → load is exact
//! and saving twice gives the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convergence::BenchConfig;
use crate::data::{gen_synthetic, load_idx, Dataset, SyntheticKind};
use crate::error::{LabError, Result};
use crate::model::{LayerSpec, Model};
use crate::rng::Rng;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Blobs,
    Spirals,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub n_per_class: usize,
    pub noise: f64,
    /// Synthetic held-out samples per class; 0 disables the test split.
    pub test_per_class: usize,
    /// IDX files (training pair, then optional test pair).
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Spirals,
            classes: 2,
            n_per_class: 400,
            noise: 0.15,
            test_per_class: 0,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

/// Train split and optional test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::Idx => {
                if self.images.is_none() || self.labels.is_none() {
                    return Err(LabError::config("dataset.images", "idx datasets need images and labels paths"));
                }
                if self.test_images.is_some() != self.test_labels.is_some() {
                    return Err(LabError::config("dataset.test_images", "give both test paths or neither"));
                }
            }
            _ => {
                if self.classes < 2 {
                    return Err(LabError::config("dataset.classes", "must be >= 2"));
                }
                if self.n_per_class == 0 {
                    return Err(LabError::config("dataset.n_per_class", "must be >= 1"));
                }
                if !(self.noise >= 0.0) {
                    return Err(LabError::config("dataset.noise", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Relative IDX paths resolve against `base` (the config's directory).
    pub fn load(&self, seed: u64, base: &Path) -> Result<Splits> {
        self.validate()?;
        let root = Rng::new(seed);
        let synth = |kind, n, stream| gen_synthetic(kind, self.classes, n, self.noise, &mut root.split(stream));
        match self.kind {
            DatasetKind::Blobs | DatasetKind::Spirals => {
                let kind = if self.kind == DatasetKind::Blobs { SyntheticKind::Blobs } else { SyntheticKind::Spirals };
                let train = synth(kind, self.n_per_class, 200)?;
                let test = if self.test_per_class > 0 { Some(synth(kind, self.test_per_class, 201)?) } else { None };
                Ok(Splits { train, test })
            }
            DatasetKind::Idx => {
                let at = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
                let train = load_idx(&at(&self.images).expect("validated"), &at(&self.labels).expect("validated"))?;
                let test = match (at(&self.test_images), at(&self.test_labels)) {
                    (Some(i), Some(l)) => Some(load_idx(&i, &l)?),
                    _ => None,
                };
                Ok(Splits { train, test })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
}

impl Default for ModelConfig {
    /// Two-spirals net: full-precision input and output layers around one
    /// binarized 32×32 layer, whose output is scaled by `1/√32` so the
    /// ±1 weights do not blow up the pre-activations.
    fn default() -> Self {
        Self {
            layers: spirals_layers(),
        }
    }
}

pub fn spirals_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(2, 32, false),
        LayerSpec::Relu,
        LayerSpec::dense(32, 32, true),
        LayerSpec::Scale { factor: 1.0 / 32f64.sqrt() },
        LayerSpec::Relu,
        LayerSpec::dense(32, 2, false),
    ]
}

impl ModelConfig {
    /// Builds the model with weights drawn from the run seed.
    pub fn build(&self, input_shape: &[usize], seed: u64) -> Result<Model> {
        if !self.layers.iter().any(|l| {
            matches!(l, LayerSpec::Dense { binarize: true, .. } | LayerSpec::Conv2d { binarize: true, .. })
        }) {
            return Err(LabError::config("model.layers", "at least one layer must be binarized"));
        }
        Model::new(self.layers.clone(), input_shape, &mut Rng::new(seed).split(300))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subdirectory of the output root for this run; defaults to the config
    /// file's stem.
    pub name: Option<String>,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            LabError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dataset.validate()?;
        self.bench.validate()?;
        if self.model.layers.is_empty() {
            return Err(LabError::config("model.layers", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::config("<serialize>", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical()?)?;
        Ok(())
    }
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.beta, 0.3);
        assert_eq!(cfg.train.l, 6);
        assert_eq!(cfg.train.hyper_lr, 1e-3);
    }

    #[test]
    fn zero_history_names_l() {
        match RunConfig::parse("[train]\nl = 0\n") {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "l"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_has_position() {
        match RunConfig::parse("[train]\nbeta = 0.5\nbogus = 1\n") {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn canonical_form_is_stable() {
        let cfg = RunConfig::parse("[train]\nbeta = 0.7\nslow_kind = \"lstm\"\n[dataset]\nkind = \"blobs\"\n").unwrap();
        let a = cfg.to_canonical().unwrap();
        let back = RunConfig::parse(&a).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical().unwrap(), a);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("", 0), (1, 1));
    }
}
