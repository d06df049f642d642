//! Fully connected decoder and its on-disk exchange format.
//!
//! Weights are a flat little-endian `f64` stream: for each layer the
//! `[in, out]` weight matrix in row-major order, then the `out` biases. A JSON
//! sidecar next to the stream lists the layer sizes and activations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::{read_json, write_json};
use crate::numerics::{Array, Var};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `[in, out]`
    pub weight: Array<T>,
    /// `[1, out]`
    pub bias: Array<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weight: Array<T>, bias: Array<T>, activation: Activation) -> Result<Self> {
        let out = match *weight.shape() {
            [_, out] => out,
            _ => return Err(Error::invalid(format!("layer weight must be 2-D, got {:?}", weight.shape()))),
        };
        if bias.len() != out {
            return Err(Error::invalid(format!("bias has {} entries, layer has {out} outputs", bias.len())));
        }
        let bias = bias.reshape(&[1, out])?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// `x -> act_k(... act_1(x W_1 + b_1) ...)` applied to a row vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDecoder<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> MlpDecoder<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("decoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::invalid(format!(
                    "layer sizes do not chain: {} outputs into {} inputs",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Runs the decoder on any input with `inputs()` entries; returns `[1, outputs()]`.
    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let mut h = x.reshape(&[1, self.inputs()])?;
        for layer in &self.layers {
            let w = tape.constant(layer.weight.clone());
            let b = tape.constant(layer.bias.clone());
            h = h.matmul(w)?.add(b)?;
            h = match layer.activation {
                Activation::Identity => h,
                Activation::Tanh => h.tanh()?,
                Activation::Sigmoid => h.sigmoid()?,
            };
        }
        Ok(h)
    }

    pub fn cast<U: Real>(&self) -> MlpDecoder<U> {
        MlpDecoder {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderHeader {
    pub layers: Vec<LayerHeader>,
}

/// Sidecar path for a weights stream: the same path with a `.json` extension.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn load_decoder(weights: &Path) -> Result<MlpDecoder<f64>> {
    let header: DecoderHeader = read_json(&sidecar_path(weights))?;
    let bytes = fs::read(weights).map_err(|source| Error::Io {
        path: weights.to_path_buf(),
        source,
    })?;
    let expected: usize = header.layers.iter().map(|l| (l.inputs + 1) * l.outputs).sum();
    if bytes.len() != expected * 8 {
        return Err(Error::invalid(format!(
            "{}: expected {} bytes for the declared layers, found {}",
            weights.display(),
            expected * 8,
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut layers = Vec::with_capacity(header.layers.len());
    for l in &header.layers {
        let weight: Vec<f64> = values.by_ref().take(l.inputs * l.outputs).collect();
        let bias: Vec<f64> = values.by_ref().take(l.outputs).collect();
        layers.push(DenseLayer::new(
            Array::new(vec![l.inputs, l.outputs], weight)?,
            Array::new(vec![1, l.outputs], bias)?,
            l.activation,
        )?);
    }
    MlpDecoder::new(layers)
}

pub fn save_decoder(decoder: &MlpDecoder<f64>, weights: &Path) -> Result<()> {
    let header = DecoderHeader {
        layers: decoder
            .layers
            .iter()
            .map(|l| LayerHeader {
                inputs: l.inputs(),
                outputs: l.outputs(),
                activation: l.activation,
            })
            .collect(),
    };
    let mut bytes = Vec::new();
    for l in &decoder.layers {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(weights, bytes).map_err(|source| Error::Io {
        path: weights.to_path_buf(),
        source,
    })?;
    write_json(&header, &sidecar_path(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn tiny() -> MlpDecoder<f64> {
        let l1 = DenseLayer::new(
            Array::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.5, 2.0, 0.0]).unwrap(),
            Array::from_vec(vec![0.0, 0.1, 0.2]).unwrap(),
            Activation::Tanh,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            Array::new(vec![3, 1], vec![1.0, -1.0, 0.5]).unwrap(),
            Array::from_vec(vec![0.3]).unwrap(),
            Activation::Sigmoid,
        )
        .unwrap();
        MlpDecoder::new(vec![l1, l2]).unwrap()
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let dec = tiny();
        let tape = Tape::new();
        let y = dec.forward(tape.constant(Array::from_vec(vec![0.4, -0.2]).unwrap())).unwrap();
        let h = [(0.4f64 - 0.1).tanh(), (-0.4f64 + 0.1).tanh(), (-0.4f64 + 0.2).tanh()];
        let z = h[0] - h[1] + 0.5 * h[2] + 0.3;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((y.item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.bin");
        save_decoder(&tiny(), &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load_decoder(&path).unwrap(), tiny());
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.bin");
        save_decoder(&tiny(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_decoder(&path).is_err());
        assert!(load_decoder(&dir.path().join("missing.bin")).is_err());
    }

    #[test]
    fn layers_must_chain() {
        let a = DenseLayer::<f64>::new(Array::zeros(&[2, 3]), Array::zeros(&[3]), Activation::Tanh).unwrap();
        let b = DenseLayer::new(Array::zeros(&[4, 1]), Array::zeros(&[1]), Activation::Sigmoid).unwrap();
        assert!(MlpDecoder::new(vec![a, b]).is_err());
    }
}
