//! The experiment configuration: one JSON document covering every stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use symflow::data::Sampling;
use symflow::latent::AutoencoderArch;
use symflow::oracle::{ClassifierArch, OutputHead};
use symflow::symmetry::GeneratorConfig;
use symflow::TrainConfig;

/// Environment variable consulted for the default MNIST directory.
pub const MNIST_DIR_ENV: &str = "SYMFLOW_MNIST_DIR";

/// Train/test image counts under `--desk`.
pub const DESK_TRAIN: usize = 2000;
pub const DESK_TEST: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Mnist(MnistSpec),
    Synthetic(SyntheticSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Mnist(MnistSpec::default())
    }
}

/// MNIST training files, filtered to `classes` and split into train and
/// test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSpec {
    /// Directory holding `train-images-idx3-ubyte` and
    /// `train-labels-idx1-ubyte` (optionally gzipped, `.gz` suffix).
    pub dir: PathBuf,
    /// Classes kept; empty keeps all ten.
    pub classes: Vec<usize>,
    pub split: (usize, usize),
    /// Subsample sizes applied after the split.
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
}

impl Default for MnistSpec {
    fn default() -> Self {
        MnistSpec {
            dir: std::env::var_os(MNIST_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data/mnist")),
            classes: vec![0, 1],
            split: (3, 1),
            train_count: None,
            test_count: None,
        }
    }
}

/// Points sampled around the origin and labelled by an analytic oracle, which
/// then serves directly as the conserved map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub oracle: String,
    pub train_count: usize,
    /// Held-out points used for evaluation, closure and flow starts.
    pub eval_count: usize,
    pub sampling: Sampling,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            oracle: "sumsq2d".into(),
            train_count: 1000,
            eval_count: 512,
            sampling: Sampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderStage {
    pub arch: AutoencoderArch,
    pub train: TrainConfig,
}

impl Default for AutoencoderStage {
    fn default() -> Self {
        AutoencoderStage {
            arch: AutoencoderArch::default(),
            train: TrainConfig {
                epochs: 100,
                batch_size: Some(64),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierStage {
    pub arch: ClassifierArch,
    pub train: TrainConfig,
}

impl Default for ClassifierStage {
    fn default() -> Self {
        ClassifierStage {
            arch: ClassifierArch {
                head: OutputHead::Sigmoid,
                ..ClassifierArch::default()
            },
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorStage {
    pub count: usize,
    pub training: GeneratorConfig,
}

impl Default for GeneratorStage {
    fn default() -> Self {
        GeneratorStage {
            count: 1,
            training: GeneratorConfig {
                seed: 2,
                ..GeneratorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureStage {
    /// Number of held-out points the brackets are sampled at.
    pub points: usize,
    /// Largest pair residual still declared closed.
    pub tolerance: f64,
    pub abelian_tolerance: f64,
}

impl Default for ClosureStage {
    fn default() -> Self {
        ClosureStage {
            points: 512,
            tolerance: 0.05,
            abelian_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowStage {
    pub epsilon: f64,
    /// Steps in each direction.
    pub steps: usize,
    /// Exported frame spacing in steps.
    pub stride: usize,
    /// Start points for synthetic data; empty uses the first three held-out
    /// points. Image data always starts at the class centers.
    pub starts: Vec<Vec<f64>>,
}

impl Default for FlowStage {
    fn default() -> Self {
        FlowStage {
            epsilon: 1e-3,
            steps: 6000,
            stride: 2000,
            starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Seed of the split and subsampling.
    pub seed: u64,
    pub latent_dim: usize,
    pub autoencoder: AutoencoderStage,
    pub classifier: ClassifierStage,
    pub generators: GeneratorStage,
    pub closure: ClosureStage,
    pub flow: FlowStage,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            seed: 0,
            latent_dim: 2,
            autoencoder: AutoencoderStage::default(),
            classifier: ClassifierStage::default(),
            generators: GeneratorStage::default(),
            closure: ClosureStage::default(),
            flow: FlowStage::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the data seed to `seed` and the stage seeds to `seed + 0, 1, 2`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.autoencoder.train.seed = seed;
        self.classifier.train.seed = seed.wrapping_add(1);
        self.generators.training.seed = seed.wrapping_add(2);
    }

    /// Subsamples MNIST to the desk-scale image counts.
    pub fn desk(&mut self) {
        if let DatasetSpec::Mnist(m) = &mut self.dataset {
            m.train_count = Some(DESK_TRAIN);
            m.test_count = Some(DESK_TEST);
        }
    }
}

/// The three experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Digits 0 and 1 in a two-dimensional latent space.
    TwoDigitsTwoDims,
    /// Digits 0 and 1 in three latent dimensions with two generators.
    TwoDigitsThreeDims,
    /// All ten digits in sixteen latent dimensions.
    TenDigitsSixteenDims,
}

impl Recipe {
    pub const ALL: [Recipe; 3] = [
        Recipe::TwoDigitsTwoDims,
        Recipe::TwoDigitsThreeDims,
        Recipe::TenDigitsSixteenDims,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::TwoDigitsTwoDims => "recipe-2v2d",
            Recipe::TwoDigitsThreeDims => "recipe-2v3d",
            Recipe::TenDigitsSixteenDims => "recipe-16v10d",
        }
    }

    pub fn from_name(name: &str) -> Option<Recipe> {
        Recipe::ALL.into_iter().find(|r| r.name() == name)
    }

    /// The preset configuration, built on top of `base` (whose dataset
    /// directory is kept).
    pub fn config(self, base: &ExperimentConfig) -> ExperimentConfig {
        let dir = match &base.dataset {
            DatasetSpec::Mnist(m) => m.dir.clone(),
            DatasetSpec::Synthetic(_) => MnistSpec::default().dir,
        };
        let mut cfg = ExperimentConfig {
            dataset: DatasetSpec::Mnist(MnistSpec {
                dir,
                ..MnistSpec::default()
            }),
            ..ExperimentConfig::default()
        };
        match self {
            Recipe::TwoDigitsTwoDims => {}
            Recipe::TwoDigitsThreeDims => {
                cfg.latent_dim = 3;
                cfg.generators.count = 2;
            }
            Recipe::TenDigitsSixteenDims => {
                if let DatasetSpec::Mnist(m) = &mut cfg.dataset {
                    m.classes = Vec::new();
                }
                cfg.latent_dim = 16;
                cfg.autoencoder.arch.mapping_layer_count = 3;
                cfg.classifier.arch.head = OutputHead::Softmax;
                cfg.classifier.train.epochs = 1000;
            }
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"latent_dim": 3, "generators": {"count": 2}}"#).unwrap();
        assert_eq!(partial.latent_dim, 3);
        assert_eq!(partial.generators.count, 2);
        assert_eq!(partial.generators.training.epsilon, 1e-3);
        assert!(ExperimentConfig::from_json(r#"{"latnet_dim": 3}"#).is_err());
    }

    #[test]
    fn synthetic_dataset_parses() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "synthetic", "oracle": "proj3d", "train_count": 10}}"#,
        )
        .unwrap();
        let DatasetSpec::Synthetic(s) = cfg.dataset else {
            panic!("expected synthetic data");
        };
        assert_eq!((s.oracle.as_str(), s.train_count, s.eval_count), ("proj3d", 10, 512));
    }

    #[test]
    fn seeds_and_desk_mode() {
        let mut cfg = ExperimentConfig::default();
        cfg.reseed(10);
        assert_eq!(
            (cfg.seed, cfg.autoencoder.train.seed, cfg.classifier.train.seed, cfg.generators.training.seed),
            (10, 10, 11, 12)
        );
        cfg.desk();
        let DatasetSpec::Mnist(m) = &cfg.dataset else { unreachable!() };
        assert_eq!((m.train_count, m.test_count), (Some(2000), Some(500)));
    }

    #[test]
    fn recipes() {
        let base = ExperimentConfig::default();
        for r in Recipe::ALL {
            assert_eq!(Recipe::from_name(r.name()), Some(r));
        }
        assert_eq!(Recipe::from_name("recipe-x"), None);
        let big = Recipe::TenDigitsSixteenDims.config(&base);
        assert_eq!((big.latent_dim, big.autoencoder.arch.mapping_layer_count), (16, 3));
        assert_eq!(big.classifier.arch.head, OutputHead::Softmax);
        assert_eq!(Recipe::TwoDigitsThreeDims.config(&base).generators.count, 2);
    }
}
