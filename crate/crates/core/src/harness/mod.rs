//! Seeded synthetic experiments on the desk generator: end-to-end
//! restoration, loss ablation and degradation mismatch, plus the metrics and
//! report format they share.

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{degrade, DegradationSpec, Downsample, Kernel};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec, LatentCode};
use crate::image::ImageBuffer;
use crate::numerics::resample::resize_bilinear;
use crate::numerics::Tape;
use crate::restore::{
    invert_reference, restore_from_guide, select_reference, LossBreakdown, RestorationResult, RestoreConfig,
};
use crate::semantics::{hist_loss, Embedder, EmbedderSpec, HistogramParams, SemanticDirection};

pub use gradcheck::{run_gradcheck, CaseResult, Suite};

/// Observation noise variance is drawn uniformly from this range.
pub const NOISE_VARIANCE: (f64, f64) = (0.001, 0.003);
/// Downsampling factor of every protocol.
pub const SCALE: usize = 4;
/// Pool size, the reference included.
pub const POOL_SIZE: usize = 5;
/// Scale of the perturbation separating the reference from the truth.
pub const REFERENCE_JITTER: f64 = 0.3;

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`. Equal images give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!("cannot compare {:?} with {:?}", a.dims(), b.dims())));
    }
    let n = a.as_array().len() as f64;
    let mse = crate::numerics::compensated_sum(
        a.as_array().data().iter().zip(b.as_array().data()).map(|(x, y)| (x - y) * (x - y)),
    ) / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Serialises non-finite numbers as the strings `inf`, `-inf` and `nan`.
mod tagged_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_str("nan")
        } else if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }
}

/// The degradations that produce observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueDegradation {
    Box,
    Bicubic,
    BoxNoise,
    BoxJpeg,
}

impl TrueDegradation {
    pub const ALL: [TrueDegradation; 4] = [Self::Box, Self::Bicubic, Self::BoxNoise, Self::BoxJpeg];

    pub fn name(self) -> &'static str {
        match self {
            Self::Box => "box",
            Self::Bicubic => "bicubic",
            Self::BoxNoise => "box+noise",
            Self::BoxJpeg => "box+jpeg",
        }
    }

    fn spec(self, rng: &mut ChaCha8Rng) -> DegradationSpec {
        let base = DegradationSpec {
            kernel: Kernel::identity(),
            scale: SCALE,
            ..DegradationSpec::identity()
        };
        match self {
            Self::Box => base,
            Self::Bicubic => DegradationSpec {
                downsample: Downsample::Bicubic,
                ..base
            },
            Self::BoxNoise => {
                let variance = rng.random_range(NOISE_VARIANCE.0..=NOISE_VARIANCE.1);
                DegradationSpec {
                    noise_sigma: variance.sqrt(),
                    noise_seed: rng.random(),
                    noise_in_forward: true,
                    ..base
                }
            }
            Self::BoxJpeg => DegradationSpec {
                jpeg_quality: Some(50),
                ..base
            },
        }
    }
}

/// The fixed parts of an experiment: generator, embedder, and the attribute
/// directions planted in the generator.
pub struct Scenario {
    pub gen: Generator,
    pub embedder: Embedder,
    pub planted: Vec<SemanticDirection>,
}

impl Scenario {
    pub fn desk(seed: u64) -> Result<Self> {
        let gen = Generator::from_spec(&GeneratorSpec::desk(seed, 3)?)?;
        let embedder = Embedder::from_spec(&EmbedderSpec::toy(seed))?;
        let planted = gen
            .spec()
            .planted()
            .iter()
            .map(|p| SemanticDirection::new(p.name.clone(), p.direction.clone(), 0.0, 1.0))
            .collect::<Result<_>>()?;
        Ok(Self { gen, embedder, planted })
    }
}

/// A synthetic ground truth, its observation and a reference pool.
pub struct Trial {
    pub seed: u64,
    pub truth_latent: LatentCode,
    pub truth: ImageBuffer<f64>,
    pub true_spec: DegradationSpec,
    pub observation: ImageBuffer<f64>,
    pub pool: Vec<ImageBuffer<f64>>,
    /// Index of the intended reference in `pool`.
    pub reference: usize,
    /// The first planted direction, oriented toward the truth's side of it.
    pub target: SemanticDirection,
}

pub const TARGET_NAME: &str = "target";

/// Builds trial `seed`. The reference is the truth moved orthogonally to the
/// first planted direction, so it shares that attribute; the other pool
/// entries are independent samples.
pub fn make_trial(scn: &Scenario, seed: u64, degradation: TrueDegradation) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = &scn.gen;
    let truth_latent = gen.sample_latent(&mut rng);
    let truth = gen.generate(&truth_latent)?;
    let true_spec = degradation.spec(&mut rng);
    let observation = degrade(&truth, &true_spec)?;

    let u = scn.planted[0].direction();
    let w = truth_latent.flatten();
    let mut jitter: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    let along: f64 = jitter.iter().zip(u).map(|(a, b)| a * b).sum();
    jitter.iter_mut().zip(u).for_each(|(j, b)| *j -= along * b);
    let reference_latent = LatentCode::from_flat(
        gen.latent_shape(),
        w.iter().zip(&jitter).map(|(a, j)| a + REFERENCE_JITTER * j).collect(),
    )?;

    let reference = rng.random_range(0..POOL_SIZE);
    let pool = (0..POOL_SIZE)
        .map(|i| {
            if i == reference {
                gen.generate(&reference_latent)
            } else {
                gen.generate(&gen.sample_latent(&mut rng))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let side = w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>().signum();
    let target = SemanticDirection::new(TARGET_NAME.into(), u.iter().map(|v| side * v).collect(), 0.0, 1.0)?;
    Ok(Trial {
        seed,
        truth_latent,
        truth,
        true_spec,
        observation,
        pool,
        reference,
        target,
    })
}

/// Bilinear upsampling of the observation to the truth's size, the baseline
/// every restoration is compared against.
pub fn upsample_baseline(observation: &ImageBuffer<f64>, h: usize, w: usize) -> Result<ImageBuffer<f64>> {
    ImageBuffer::clipped(resize_bilinear(observation.as_array(), h, w)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Variant or true-degradation label the trial is aggregated under.
    pub group: String,
    pub true_spec: DegradationSpec,
    pub assumed_spec: DegradationSpec,
    pub selected_reference: usize,
    pub reference_correct: bool,
    #[serde(with = "tagged_float")]
    pub psnr: f64,
    #[serde(with = "tagged_float")]
    pub baseline_psnr: f64,
    /// Cosine between the embeddings of the restoration and the truth.
    pub similarity: f64,
    /// Histogram loss between the restoration and the truth, full masks.
    pub hist_to_truth: f64,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(with = "tagged_float")]
    pub mean: f64,
    /// Population standard deviation.
    #[serde(with = "tagged_float")]
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub trials: usize,
    pub psnr: Stat,
    pub baseline_psnr: Stat,
    pub similarity: Stat,
    pub hist_to_truth: Stat,
    /// Trials whose restoration beats the upsampled observation.
    pub beats_baseline: usize,
    /// Trials whose final fidelity term is below the initial one.
    pub fidelity_improved: usize,
    pub reference_correct: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    EndToEnd,
    Ablation,
    Robustness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub trials: usize,
    pub config: RestoreConfig,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Per-group summaries in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut groups: Vec<&str> = Vec::new();
    for r in records {
        if !groups.contains(&r.group.as_str()) {
            groups.push(&r.group);
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.group == g).collect();
            let stat = |f: fn(&TrialRecord) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                group: g.to_string(),
                trials: rs.len(),
                psnr: stat(|r| r.psnr),
                baseline_psnr: stat(|r| r.baseline_psnr),
                similarity: stat(|r| r.similarity),
                hist_to_truth: stat(|r| r.hist_to_truth),
                beats_baseline: rs.iter().filter(|r| r.psnr > r.baseline_psnr).count(),
                fidelity_improved: rs.iter().filter(|r| r.final_loss.data < r.initial_loss.data).count(),
                reference_correct: rs.iter().filter(|r| r.reference_correct).count(),
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn group(&self, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == name)
    }
}

/// Named configurations compared by the ablation protocol. The variants with
/// the emotion term steer toward the trial's [`TARGET_NAME`] direction.
pub fn ablation_variants(base: &RestoreConfig) -> Vec<(String, RestoreConfig)> {
    let only = |id: bool, emotion: bool, hist: bool| RestoreConfig {
        enable_id: id,
        enable_emotion: emotion,
        enable_hist: hist,
        ..base.clone()
    };
    let targeted = |c: RestoreConfig| RestoreConfig {
        emotion_target: Some(TARGET_NAME.into()),
        ..c
    };
    vec![
        ("l_d".into(), only(false, false, false)),
        ("l_d+id".into(), only(true, false, false)),
        ("l_d+emotion".into(), targeted(only(false, true, false))),
        ("l_d+hist".into(), only(false, false, true)),
        ("full".into(), targeted(only(true, true, true))),
    ]
}

/// The assumed degradation of the robustness protocol: box downsampling
/// followed by JPEG at quality 75.
pub fn robustness_assumed_spec() -> DegradationSpec {
    DegradationSpec {
        kernel: Kernel::identity(),
        scale: SCALE,
        jpeg_quality: Some(75),
        ..DegradationSpec::identity()
    }
}

/// Runs one trial under each configuration, sharing the reference selection
/// and inversion.
pub fn run_trial(scn: &Scenario, trial: &Trial, variants: &[(String, RestoreConfig)]) -> Result<Vec<TrialRecord>> {
    let (h, w, _) = trial.truth.dims();
    let baseline = upsample_baseline(&trial.observation, h, w)?;
    let baseline_psnr = psnr(&baseline, &trial.truth)?;
    let truth_embedding = scn.embedder.embed(&trial.truth)?;
    let (index, z) = select_reference(&trial.pool, &trial.observation, &scn.embedder)?;
    let directions = std::slice::from_ref(&trial.target);

    let trial_config = |config: &RestoreConfig| RestoreConfig {
        seed: trial.seed,
        ..config.clone()
    };
    // Variants differ only in their loss settings, so they share one guide.
    let first = trial_config(&variants.first().ok_or_else(|| Error::invalid("no variants to run"))?.1);
    let w_z = invert_reference(z, &first, &scn.gen)?;
    let mut records = Vec::with_capacity(variants.len());
    for (group, config) in variants {
        let config = trial_config(config);
        let res = restore_from_guide(
            &trial.observation,
            index,
            z,
            &w_z,
            &config,
            &scn.gen,
            &scn.embedder,
            directions,
        )?;
        let hist = {
            let tape = Tape::new();
            let full = crate::numerics::Array::full(&[h, w], 1.0);
            hist_loss(
                tape.constant(res.image.as_array().clone()),
                &full,
                tape.constant(trial.truth.as_array().clone()),
                &full,
                HistogramParams::new(config.hist_bins),
            )?
            .item()?
        };
        records.push(TrialRecord {
            seed: trial.seed,
            group: group.clone(),
            true_spec: trial.true_spec.clone(),
            assumed_spec: config.degradation.clone(),
            selected_reference: index,
            reference_correct: index == trial.reference,
            psnr: psnr(&res.image, &trial.truth)?,
            baseline_psnr,
            similarity: scn.embedder.embed(&res.image)?.cosine(&truth_embedding),
            hist_to_truth: hist,
            initial_loss: res.trace.first().copied().unwrap_or(res.final_loss),
            final_loss: res.final_loss,
            seconds: res.seconds,
        });
    }
    Ok(records)
}

/// Restores one trial under a single configuration and returns the full
/// result. Matches the corresponding [`run_trial`] record.
pub fn restore_trial(scn: &Scenario, trial: &Trial, config: &RestoreConfig) -> Result<RestorationResult> {
    let config = RestoreConfig {
        seed: trial.seed,
        ..config.clone()
    };
    let (index, z) = select_reference(&trial.pool, &trial.observation, &scn.embedder)?;
    let w_z = invert_reference(z, &config, &scn.gen)?;
    restore_from_guide(
        &trial.observation,
        index,
        z,
        &w_z,
        &config,
        &scn.gen,
        &scn.embedder,
        std::slice::from_ref(&trial.target),
    )
}

/// Runs `trials` seeded trials of a protocol. Trials run in parallel on the
/// current rayon pool; results do not depend on the pool size.
pub fn run_protocol(protocol: Protocol, trials: usize, seed: u64, base: &RestoreConfig) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    base.validate()?;
    let scn = Scenario::desk(seed)?;
    let jobs: Vec<(u64, TrueDegradation, Vec<(String, RestoreConfig)>)> = match protocol {
        Protocol::EndToEnd => (0..trials as u64)
            .map(|i| (i, TrueDegradation::BoxNoise, vec![("full".to_string(), base.clone())]))
            .collect(),
        Protocol::Ablation => (0..trials as u64)
            .map(|i| (i, TrueDegradation::BoxNoise, ablation_variants(base)))
            .collect(),
        Protocol::Robustness => {
            let assumed = RestoreConfig {
                degradation: robustness_assumed_spec(),
                ..base.clone()
            };
            TrueDegradation::ALL
                .iter()
                .flat_map(|&d| (0..trials as u64).map(move |i| (i, d)))
                .map(|(i, d)| (i, d, vec![(d.name().to_string(), assumed.clone())]))
                .collect()
        }
    };
    let records: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|(i, degradation, variants)| {
            let trial = make_trial(&scn, seed.wrapping_mul(1_000_003).wrapping_add(*i), *degradation)?;
            run_trial(&scn, &trial, variants)
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = records.into_iter().flatten().collect();
    Ok(ExperimentReport {
        protocol,
        seed,
        trials,
        config: base.clone(),
        aggregates: aggregate(&records),
        records,
    })
}
