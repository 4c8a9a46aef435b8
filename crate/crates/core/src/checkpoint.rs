//! Model checkpoints as JSON:
//! `{"dims": [...], "bottleneck_index": k, "activations": [...], "weights": [[...], ...]}`
//! with each weight matrix flattened row-major and every real written with 17
//! significant digits, which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Layer, NetworkParams};

#[derive(Debug, Deserialize)]
struct CheckpointFile {
    dims: Vec<usize>,
    bottleneck_index: usize,
    activations: Vec<String>,
    weights: Vec<Vec<f64>>,
    #[serde(default)]
    biases: Option<Vec<Vec<f64>>>,
}

/// `f64` with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_reals(out: &mut String, vals: &[f64]) {
    out.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_real(*v));
    }
    out.push(']');
}

/// Serializes `params`; `config_hash`, when given, is stored as an extra field.
pub fn to_json(params: &NetworkParams, config_hash: Option<&str>) -> String {
    let mut out = String::new();
    out.push('{');
    if let Some(h) = config_hash {
        let _ = write!(out, "\"config_hash\":{},", serde_json::Value::from(h));
    }
    let dims: Vec<String> = params.dims().iter().map(usize::to_string).collect();
    let _ = write!(out, "\"dims\":[{}],", dims.join(","));
    let _ = write!(out, "\"bottleneck_index\":{},", params.bottleneck_index());
    let acts: Vec<String> = params
        .activations()
        .iter()
        .map(|a| format!("\"{}\"", a.as_str()))
        .collect();
    let _ = write!(out, "\"activations\":[{}],", acts.join(","));
    out.push_str("\"weights\":[");
    for (i, w) in params.weights().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_reals(&mut out, w.values());
    }
    out.push(']');
    if params.has_bias() {
        out.push_str(",\"biases\":[");
        for (i, l) in params.layers().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let zeros = vec![0.0; l.out_dim()];
            push_reals(&mut out, l.bias.as_deref().unwrap_or(&zeros));
        }
        out.push(']');
    }
    out.push_str("}\n");
    out
}

pub fn from_json(text: &str) -> Result<NetworkParams> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let d = file.weights.len();
    if file.dims.len() != d + 1 || file.activations.len() != d {
        return Err(Error::Checkpoint(format!(
            "{} dims and {} activations do not describe {} weight matrices",
            file.dims.len(),
            file.activations.len(),
            d
        )));
    }
    if let Some(b) = &file.biases {
        if b.len() != d {
            return Err(Error::Checkpoint(format!(
                "{} bias vectors for {d} layers",
                b.len()
            )));
        }
    }
    let mut layers = Vec::with_capacity(d);
    for (i, vals) in file.weights.into_iter().enumerate() {
        let w = Matrix::new(file.dims[i + 1], file.dims[i], vals)
            .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        let act = Activation::parse(&file.activations[i])
            .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        let mut layer = Layer::new(w, act);
        layer.bias = file.biases.as_ref().map(|b| b[i].clone());
        layers.push(layer);
    }
    NetworkParams::new(layers, file.bottleneck_index).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(params: &NetworkParams, path: &Path, config_hash: Option<&str>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_json(params, config_hash))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetworkParams> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{arch_from_dims, Activation};

    #[test]
    fn layout_matches_schema() {
        let w = Matrix::new(1, 2, vec![0.1, -2.0]).unwrap();
        let w2 = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let p = NetworkParams::new(
            vec![
                Layer::new(w, Activation::Relu),
                Layer::new(w2, Activation::Sigmoid),
            ],
            1,
        )
        .unwrap();
        let text = to_json(&p, None);
        assert_eq!(
            text,
            "{\"dims\":[2,1,2],\"bottleneck_index\":1,\"activations\":[\"relu\",\"sigmoid\"],\
             \"weights\":[[1.0000000000000001e-1,-2.0000000000000000e0],[1.0000000000000000e0,3.0000000000000000e0]]}\n"
        );
        assert_eq!(from_json(&text).unwrap(), p);
    }

    #[test]
    fn bias_round_trip() {
        let arch = arch_from_dims(&[5, 3, 5], Activation::Relu, Activation::Sigmoid);
        let mut p = NetworkParams::init(&arch, true, 2).unwrap();
        p.layers_mut()[0].bias = Some(vec![0.25, -1.0 / 3.0, 1e-300]);
        let back = from_json(&to_json(&p, Some("abc"))).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn malformed_rejected() {
        assert!(from_json("{}").is_err());
        let bad = "{\"dims\":[2,2],\"bottleneck_index\":1,\"activations\":[\"relu\"],\"weights\":[[1,2,3]]}";
        assert!(matches!(from_json(bad), Err(Error::Checkpoint(_))));
        let bad_act =
            "{\"dims\":[1,1],\"bottleneck_index\":1,\"activations\":[\"tanh\"],\"weights\":[[1]]}";
        assert!(from_json(bad_act).is_err());
    }
}
