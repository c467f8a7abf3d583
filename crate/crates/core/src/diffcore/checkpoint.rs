//! JSON checkpoints for [`Mlp`] parameters.
//!
//! ```text
//! {"layer_sizes":[2,4,1],"activations":["relu","identity"],
//!  "weights":[[...row-major...],[...]],"biases":[[...],[...]],"seed":7}
//! ```
//!
//! Floats are written with 17 significant digits, so a save/load round trip
//! reproduces every parameter bit for bit. Additional top-level string or
//! number fields (for example `"output_head"`) may be attached.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use serde::Deserialize;
use serde_json::{Map, Value};

use super::mlp::{Activation, Mlp};
use crate::{Error, Result};

const KNOWN_KEYS: [&str; 5] = ["layer_sizes", "activations", "weights", "biases", "seed"];

pub(crate) fn push_f64(out: &mut String, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("cannot serialize {v}")));
    }
    write!(out, "{v:.16e}").unwrap();
    Ok(())
}

fn push_f64_list<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    out.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64(out, *v)?;
    }
    out.push(']');
    Ok(())
}

/// Serializes `mlp` with any extra top-level fields appended.
pub fn write_checkpoint(mlp: &Mlp, extra: &Map<String, Value>) -> Result<String> {
    let mut out = String::from("{\"layer_sizes\":");
    out.push_str(&serde_json::to_string(mlp.layer_sizes())?);
    out.push_str(",\"activations\":");
    let names: Vec<&str> = mlp.activations().iter().map(|a| a.name()).collect();
    out.push_str(&serde_json::to_string(&names)?);

    out.push_str(",\"weights\":[");
    for (j, w) in mlp.weights().iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        // iter() on a standard-layout array is row-major
        push_f64_list(&mut out, w.iter())?;
    }
    out.push_str("],\"biases\":[");
    for (j, b) in mlp.biases().iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        push_f64_list(&mut out, b.iter())?;
    }
    write!(out, "],\"seed\":{}", mlp.seed()).unwrap();

    for (key, value) in extra {
        if KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Checkpoint(format!("extra field `{key}` shadows a parameter field")));
        }
        write!(out, ",{}:{}", serde_json::to_string(key)?, serde_json::to_string(value)?).unwrap();
    }
    out.push('}');
    Ok(out)
}

#[derive(Deserialize)]
struct Document {
    layer_sizes: Vec<usize>,
    activations: Vec<String>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: u64,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parses a checkpoint, returning the network and any extra fields.
pub fn read_checkpoint(text: &str) -> Result<(Mlp, Map<String, Value>)> {
    let doc: Document = serde_json::from_str(text)?;
    let layers = doc.layer_sizes.len().saturating_sub(1);
    if layers == 0 || doc.activations.len() != layers {
        return Err(Error::Checkpoint(format!(
            "{} layer sizes with {} activations",
            doc.layer_sizes.len(),
            doc.activations.len()
        )));
    }
    if doc.weights.len() != layers || doc.biases.len() != layers {
        return Err(Error::Checkpoint(format!(
            "expected {layers} weight and bias blocks, found {} and {}",
            doc.weights.len(),
            doc.biases.len()
        )));
    }
    let activations = doc
        .activations
        .iter()
        .map(|name| {
            Activation::from_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown activation `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for (j, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
        let (fan_in, fan_out) = (doc.layer_sizes[j], doc.layer_sizes[j + 1]);
        let w = Array2::from_shape_vec((fan_out, fan_in), w).map_err(|_| {
            Error::Checkpoint(format!("layer {j} weights do not have shape {fan_out}x{fan_in}"))
        })?;
        if b.len() != fan_out {
            return Err(Error::Checkpoint(format!(
                "layer {j} bias has length {}, expected {fan_out}",
                b.len()
            )));
        }
        weights.push(w);
        biases.push(Array1::from_vec(b));
    }
    let mlp = Mlp::from_parts(activations, weights, biases, doc.seed)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((mlp, doc.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut mlp = Mlp::new(
            &[3, 7, 2],
            &[Activation::Sigmoid, Activation::Softmax],
            99,
        )
        .unwrap();
        mlp.biases_mut()[0][1] = -0.0;
        mlp.biases_mut()[1][0] = 1e-300;
        mlp.weights_mut()[1][(1, 2)] = std::f64::consts::PI * 1e12;
        let mut extra = Map::new();
        extra.insert("output_head".into(), Value::from("softmax"));

        let text = write_checkpoint(&mlp, &extra).unwrap();
        let (back, extra_back) = read_checkpoint(&text).unwrap();
        assert_eq!(back.checksum(), mlp.checksum());
        assert_eq!(back, mlp);
        assert_eq!(extra_back["output_head"], "softmax");
        assert!(back.biases()[0][1].is_sign_negative());
        // rewriting the parsed network reproduces the same bytes
        assert_eq!(write_checkpoint(&back, &extra).unwrap(), text);
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let mlp = Mlp::new(&[2, 2], &[Activation::Relu], 1).unwrap();
        let text = write_checkpoint(&mlp, &Map::new()).unwrap();
        let broken = text.replace("\"relu\"", "\"tanh\"");
        assert!(matches!(read_checkpoint(&broken), Err(Error::Checkpoint(_))));
        let short = text.replace("\"layer_sizes\":[2,2]", "\"layer_sizes\":[2,3]");
        assert!(read_checkpoint(&short).is_err());
        assert!(read_checkpoint("{}").is_err());

        let mut shadow = Map::new();
        shadow.insert("seed".into(), Value::from(1));
        assert!(write_checkpoint(&mlp, &shadow).is_err());
    }
}
