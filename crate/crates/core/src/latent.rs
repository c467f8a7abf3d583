//! Autoencoders and the latent datasets they induce.
//!
//! The encoder is a dense stack `n → 256 → 64 → [64 × c] → ℓ` and the decoder
//! mirrors it, where `c` is the number of mapping layers on each side of the
//! bottleneck. Hidden layers use ReLU, the latent layer is linear and the
//! reconstruction layer is a sigmoid so decoded pixels stay in `(0, 1)`.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffcore::{read_checkpoint, write_checkpoint, Activation, Mlp};
use crate::train::{fit, Objective, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderArch {
    /// Widths between the input and the mapping layers, outermost first.
    pub hidden: Vec<usize>,
    pub mapping_width: usize,
    pub mapping_layer_count: usize,
}

impl Default for AutoencoderArch {
    fn default() -> Self {
        AutoencoderArch {
            hidden: vec![256, 64],
            mapping_width: 64,
            mapping_layer_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    mapping_layer_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderReport {
    pub epoch_losses: Vec<f64>,
    /// Reconstruction MSE over the whole training set after the last update.
    pub final_mse: f64,
    pub warnings: Vec<String>,
}

/// Latent vectors `z_i = E(x_i)` with the targets and labels of their source
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub latents: Array2<f64>,
    pub targets: Array2<f64>,
    pub class_labels: Option<Vec<usize>>,
}

impl LatentDataset {
    pub fn latent_dim(&self) -> usize {
        self.latents.ncols()
    }

    pub fn sample_count(&self) -> usize {
        self.latents.nrows()
    }

    /// The same samples as a [`Dataset`] whose features are the latents.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.latents.clone(),
            self.targets.clone(),
            self.class_labels.clone(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    latent_dim: usize,
    mapping_layer_count: usize,
}

impl Autoencoder {
    pub fn from_parts(encoder: Mlp, decoder: Mlp, mapping_layer_count: usize) -> Result<Self> {
        if encoder.output_width() != decoder.input_width() {
            return Err(Error::shape(format!(
                "encoder emits width {}, decoder takes {}",
                encoder.output_width(),
                decoder.input_width()
            )));
        }
        if decoder.output_width() != encoder.input_width() {
            return Err(Error::shape(format!(
                "decoder reconstructs width {}, encoder takes {}",
                decoder.output_width(),
                encoder.input_width()
            )));
        }
        Ok(Autoencoder {
            latent_dim: encoder.output_width(),
            encoder,
            decoder,
            mapping_layer_count,
        })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn feature_width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn mapping_layer_count(&self) -> usize {
        self.mapping_layer_count
    }

    pub fn encode(&self, dataset: &Dataset) -> Result<LatentDataset> {
        Ok(LatentDataset {
            latents: self.encoder.forward(dataset.features().view())?,
            targets: dataset.targets().clone(),
            class_labels: dataset.class_labels().map(<[usize]>::to_vec),
        })
    }

    pub fn decode(&self, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.forward(latents)
    }

    pub fn reconstruction_mse(&self, features: ArrayView2<f64>) -> Result<f64> {
        let z = self.encoder.forward(features)?;
        let x = self.decoder.forward(z.view())?;
        let d = &x - &features;
        Ok(d.iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64)
    }

    /// Writes `encoder.json`, `decoder.json` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let empty = serde_json::Map::new();
        for (name, net) in [("encoder.json", &self.encoder), ("decoder.json", &self.decoder)] {
            let path = dir.join(name);
            std::fs::write(&path, write_checkpoint(net, &empty)?).map_err(|e| Error::file(path, e))?;
        }
        let manifest = Manifest {
            latent_dim: self.latent_dim,
            mapping_layer_count: self.mapping_layer_count,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::file(path, e))
        };
        let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)?;
        let (encoder, _) = read_checkpoint(&read("encoder.json")?)?;
        let (decoder, _) = read_checkpoint(&read("decoder.json")?)?;
        let ae = Autoencoder::from_parts(encoder, decoder, manifest.mapping_layer_count)?;
        if ae.latent_dim != manifest.latent_dim {
            return Err(Error::Checkpoint(format!(
                "manifest latent_dim {} but encoder emits {}",
                manifest.latent_dim, ae.latent_dim
            )));
        }
        Ok(ae)
    }
}

/// Layer widths of the full encoder-decoder stack.
fn stack_sizes(n: usize, latent_dim: usize, arch: &AutoencoderArch) -> Vec<usize> {
    let mut enc = vec![n];
    enc.extend(&arch.hidden);
    enc.extend(std::iter::repeat_n(arch.mapping_width, arch.mapping_layer_count));
    let mut sizes = enc.clone();
    sizes.push(latent_dim);
    sizes.extend(enc.iter().rev());
    sizes
}

/// Trains encoder and decoder jointly on mean squared reconstruction error.
pub fn train_autoencoder(
    dataset: &Dataset,
    latent_dim: usize,
    arch: &AutoencoderArch,
    config: &TrainConfig,
) -> Result<(Autoencoder, AutoencoderReport)> {
    if latent_dim == 0 {
        return Err(Error::config("latent dimension must be at least 1"));
    }
    let n = dataset.feature_width();
    let mut warnings = Vec::new();
    if latent_dim >= n {
        warnings.push(format!(
            "latent dimension {latent_dim} does not compress {n} features"
        ));
    }
    let features = dataset.features();
    if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config("autoencoder features must be normalized to [0, 1]"));
    }

    let sizes = stack_sizes(n, latent_dim, arch);
    let half = (sizes.len() - 1) / 2;
    let mut acts = vec![Activation::Relu; sizes.len() - 1];
    acts[half - 1] = Activation::Identity;
    *acts.last_mut().unwrap() = Activation::Sigmoid;

    let mut net = Mlp::new(&sizes, &acts, config.seed)?;
    let epoch_losses = fit(&mut net, features.view(), features.view(), Objective::Mse, config)?;
    let (encoder, decoder) = net.split_at(half)?;
    let ae = Autoencoder::from_parts(encoder, decoder, arch.mapping_layer_count)?;
    let final_mse = ae.reconstruction_mse(features.view())?;
    if !final_mse.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            what: "reconstruction error is not finite".into(),
        });
    }
    Ok((
        ae,
        AutoencoderReport {
            epoch_losses,
            final_mse,
            warnings,
        },
    ))
}

/// Per-class mean latent vectors ("platonic" points), one row per entry of
/// `classes`.
pub fn platonic_centers(latent: &LatentDataset, classes: &[usize]) -> Result<Array2<f64>> {
    let labels = latent
        .class_labels
        .as_ref()
        .ok_or_else(|| Error::config("latent dataset has no class labels"))?;
    let mut centers = Array2::zeros((classes.len(), latent.latent_dim()));
    for (row, &class) in classes.iter().enumerate() {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::Empty(format!("class {class} has no samples")));
        }
        let members = latent.latents.select(Axis(0), &idx);
        centers
            .row_mut(row)
            .assign(&members.mean_axis(Axis(0)).expect("non-empty"));
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stack_layout_with_mapping_layers() {
        let arch = AutoencoderArch {
            mapping_layer_count: 3,
            ..AutoencoderArch::default()
        };
        assert_eq!(
            stack_sizes(784, 16, &arch),
            vec![784, 256, 64, 64, 64, 64, 16, 64, 64, 64, 64, 256, 784]
        );
        assert_eq!(
            stack_sizes(784, 2, &AutoencoderArch::default()),
            vec![784, 256, 64, 64, 2, 64, 64, 256, 784]
        );
    }

    #[test]
    fn centers_are_class_means() {
        let latent = LatentDataset {
            latents: array![[0.0, 0.0], [10.0, 10.0], [2.0, 0.0]],
            targets: Array2::zeros((3, 1)),
            class_labels: Some(vec![0, 1, 0]),
        };
        let c = platonic_centers(&latent, &[0, 1]).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [10.0, 10.0]]);
        assert!(matches!(
            platonic_centers(&latent, &[0, 5]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn memorizes_a_single_repeated_image() {
        let img: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 0.9 } else { 0.1 }).collect();
        let features = Array2::from_shape_fn((8, 16), |(_, j)| img[j]);
        let d = Dataset::new(features.clone(), Array2::zeros((8, 1)), None).unwrap();
        let arch = AutoencoderArch {
            hidden: vec![8],
            mapping_width: 4,
            mapping_layer_count: 1,
        };
        let cfg = TrainConfig {
            lr: 1e-2,
            epochs: 800,
            ..TrainConfig::default()
        };
        let (ae, report) = train_autoencoder(&d, 2, &arch, &cfg).unwrap();
        assert!(report.final_mse < 1e-4, "mse {}", report.final_mse);

        let z = ae.encode(&d).unwrap();
        let back = ae.decode(z.latents.view()).unwrap();
        let d2 = &back - &features;
        let mse = d2.iter().map(|v| v * v).sum::<f64>() / d2.len() as f64;
        assert!((mse - report.final_mse).abs() <= 1e-15);

        let zero = ae.decode(Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(zero.ncols(), 16);
        assert!(zero.iter().all(|v| v.is_finite()));
        assert!(ae.decode(Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn save_and_load() {
        let enc = Mlp::new(&[4, 3, 2], &[Activation::Relu, Activation::Identity], 1).unwrap();
        let dec = Mlp::new(&[2, 3, 4], &[Activation::Relu, Activation::Sigmoid], 2).unwrap();
        let ae = Autoencoder::from_parts(enc, dec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ae.save(dir.path()).unwrap();
        assert_eq!(Autoencoder::load(dir.path()).unwrap(), ae);
    }

    #[test]
    fn rejects_unnormalized_features_and_zero_latent() {
        let d = Dataset::new(array![[0.0, 2.0]], array![[0.0]], None).unwrap();
        assert!(train_autoencoder(&d, 1, &AutoencoderArch::default(), &TrainConfig::default()).is_err());
        let d = Dataset::new(array![[0.0, 0.5]], array![[0.0]], None).unwrap();
        assert!(train_autoencoder(&d, 0, &AutoencoderArch::default(), &TrainConfig::default()).is_err());
    }
}
