//! Attribute directions in latent space: sample latents, label them, fit a
//! linear classifier, and take the unit normal of its decision boundary.

mod classifier;

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classifier::{fit_logistic, FitParams, LinearClassifier, Standardization};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec, LatentCode};
use crate::image::encode_png;
use crate::semantics::SemanticDirection;

/// Binary attribute oracle for generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttributeLabeler {
    /// Positive when `<flatten(w), direction> > threshold`. Reads the latent
    /// directly; no image is generated.
    Planted { direction: Vec<f64>, threshold: f64 },
    /// Runs `sh -c command` per sample with the generated image as PNG on
    /// stdin; the first stdout line must be `0` or `1`.
    Command { command: String },
}

impl AttributeLabeler {
    pub fn label(&self, gen: &Generator, w: &LatentCode) -> Result<bool> {
        match self {
            Self::Planted { direction, threshold } => {
                if direction.len() != w.len() {
                    return Err(Error::invalid(format!(
                        "labeler direction has length {}, latent has {}",
                        direction.len(),
                        w.len()
                    )));
                }
                let s: f64 = w.flatten().iter().zip(direction).map(|(a, b)| a * b).sum();
                Ok(s > *threshold)
            }
            Self::Command { command } => {
                let png = encode_png(&gen.generate(w)?)?;
                run_labeler(command, &png)
            }
        }
    }
}

fn run_labeler(command: &str, png: &[u8]) -> Result<bool> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::Labeler(format!("cannot start {command:?}: {e}")))?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        // A labeler may exit without reading all input; that is not an error.
        let _ = stdin.write_all(png);
    }
    let mut line = String::new();
    BufReader::new(child.stdout.take().expect("piped stdout"))
        .read_line(&mut line)
        .map_err(|e| Error::Labeler(format!("reading from {command:?}: {e}")))?;
    let status = child
        .wait()
        .map_err(|e| Error::Labeler(format!("waiting for {command:?}: {e}")))?;
    if !status.success() {
        return Err(Error::Labeler(format!("{command:?} exited with {status}")));
    }
    match line.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Labeler(format!("{command:?} printed {other:?}, expected 0 or 1"))),
    }
}

/// Flattened latents with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDataset {
    pub latents: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub generator: GeneratorSpec,
}

impl DirectionDataset {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.positives();
        let n = self.labels.len();
        if self.latents.len() != n {
            return Err(Error::invalid(format!("{} latents but {n} labels", self.latents.len())));
        }
        if n < 2 || positive == 0 || positive == n {
            return Err(Error::DegenerateLabels {
                positive,
                negative: n - positive,
            });
        }
        Ok(())
    }
}

/// Samples `n` latents from `seed` and labels them.
pub fn build_dataset(gen: &Generator, labeler: &AttributeLabeler, n: usize, seed: u64) -> Result<DirectionDataset> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<LatentCode> = (0..n).map(|_| gen.sample_latent(&mut rng)).collect();
    let labels = codes
        .par_iter()
        .map(|w| labeler.label(gen, w))
        .collect::<Result<Vec<bool>>>()?;
    let ds = DirectionDataset {
        latents: codes.into_iter().map(|w| w.flatten().to_vec()).collect(),
        labels,
        generator: gen.spec().clone(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn fit_linear_classifier(ds: &DirectionDataset, params: &FitParams) -> Result<LinearClassifier> {
    ds.validate()?;
    fit_logistic(&ds.latents, &ds.labels, params)
}

/// Unit boundary normal pointing toward the positive class. The bias is
/// rescaled with the normal so `<x, direction> + bias` keeps its sign.
pub fn direction_from_classifier(name: &str, clf: &LinearClassifier) -> Result<SemanticDirection> {
    let norm = clf.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid(format!("classifier for {name:?} has a zero normal")));
    }
    SemanticDirection::new(
        name.to_string(),
        clf.normal.iter().map(|v| v / norm).collect(),
        clf.bias / norm,
        clf.accuracy,
    )
}

pub fn discover_direction(
    gen: &Generator,
    labeler: &AttributeLabeler,
    name: &str,
    n: usize,
    seed: u64,
    params: &FitParams,
) -> Result<SemanticDirection> {
    let ds = build_dataset(gen, labeler, n, seed)?;
    direction_from_classifier(name, &fit_linear_classifier(&ds, params)?)
}
