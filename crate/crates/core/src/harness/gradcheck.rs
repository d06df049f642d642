//! Finite-difference checks of every differentiable operation and of the
//! composed restoration objective, each at ten seeded points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::degradation::{degrade_var, soft_jpeg, DegradationSpec, Downsample, Kernel};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::image::ImageBuffer;
use crate::numerics::gradcheck::{check_gradient_skipping, GradCheckReport, FD_STEP};
use crate::numerics::{Array, DctDirection, Padding, Tape, Var};
use crate::restore::{total_loss, LossContext, RestoreConfig};
use crate::semantics::{
    emotion_loss, hist_loss, identity_loss, near_kink, soft_histogram, Embedder, EmbedderSpec, HistogramParams,
    SemanticDirection,
};

/// Points checked per case.
pub const POINTS: usize = 10;
/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the composed objective.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Numerics,
    Degradation,
    Semantics,
    Objective,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Numerics, Suite::Degradation, Suite::Semantics, Suite::Objective];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub suite: Suite,
    pub name: String,
    pub points: usize,
    pub tolerance: f64,
    /// Worst relative error over all points.
    pub max_rel_error: f64,
    /// Entries left out because they sat on a kink.
    pub skipped: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type Check = Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradCheckReport>>;

struct Case {
    suite: Suite,
    name: &'static str,
    tolerance: f64,
    check: Check,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape, |_| lo + (hi - lo) * rng.random::<f64>()).expect("finite")
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal)).expect("finite")
}

/// Checks `x -> <op(x), p>` for a random probe `p`, skipping entries for
/// which `skip(value)` holds.
fn probed<F>(x: Array<f64>, rng: &mut ChaCha8Rng, op: F, skip: impl Fn(f64) -> bool) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let shape = {
        let tape = Tape::new();
        op(tape.constant(x.clone()))?.shape()
    };
    let probe = normal(&shape, rng);
    check_gradient_skipping(
        |v| {
            let out = op(v)?;
            let p = v.tape().constant(probe.clone());
            Ok::<_, Error>(out.mul(p)?.sum()?)
        },
        &x,
        FD_STEP,
        |i, _| skip(x.data()[i]),
    )
}

fn never(_: f64) -> bool {
    false
}

fn case(suite: Suite, name: &'static str, check: impl Fn(&mut ChaCha8Rng) -> Result<GradCheckReport> + 'static) -> Case {
    Case {
        suite,
        name,
        tolerance: if suite == Suite::Objective {
            OBJECTIVE_TOLERANCE
        } else {
            OP_TOLERANCE
        },
        check: Box::new(check),
    }
}

/// A binary op checked with respect to its first (`left`) or second operand.
fn binary(
    name: &'static str,
    shape_a: &'static [usize],
    shape_b: &'static [usize],
    left: bool,
    op: for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
) -> Case {
    case(Suite::Numerics, name, move |rng| {
        let a = uniform(shape_a, -1.0, 1.0, rng);
        let b = uniform(shape_b, -1.0, 1.0, rng);
        if left {
            probed(a, rng, |v| op(v, v.tape().constant(b.clone())), never)
        } else {
            probed(b, rng, |v| op(v.tape().constant(a.clone()), v), never)
        }
    })
}

fn unary(
    name: &'static str,
    shape: &'static [usize],
    range: (f64, f64),
    op: for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
    skip: fn(f64) -> bool,
) -> Case {
    case(Suite::Numerics, name, move |rng| {
        let x = uniform(shape, range.0, range.1, rng);
        probed(x, rng, op, skip)
    })
}

fn numerics_cases() -> Vec<Case> {
    let near_half = |x: f64| (x - x.floor() - 0.5).abs() < 10.0 * FD_STEP;
    vec![
        binary("add", &[3, 4], &[3, 4], true, |a, b| Ok(a.add(b)?)),
        binary("sub/left", &[3, 4], &[3, 4], true, |a, b| Ok(a.sub(b)?)),
        binary("sub/right", &[3, 4], &[3, 4], false, |a, b| Ok(a.sub(b)?)),
        binary("mul", &[3, 4], &[3, 4], true, |a, b| Ok(a.mul(b)?)),
        binary("matmul/left", &[3, 4], &[4, 5], true, |a, b| Ok(a.matmul(b)?)),
        binary("matmul/right", &[3, 4], &[4, 5], false, |a, b| Ok(a.matmul(b)?)),
        binary("cosine_similarity/left", &[7], &[7], true, |a, b| Ok(a.cosine_similarity(b)?)),
        binary("cosine_similarity/right", &[7], &[7], false, |a, b| Ok(a.cosine_similarity(b)?)),
        unary("scale", &[5], (-1.0, 1.0), |x| Ok(x.scale(-2.5)?), never),
        unary("add_scalar", &[5], (-1.0, 1.0), |x| Ok(x.add_scalar(0.7)?), never),
        unary("neg", &[5], (-1.0, 1.0), |x| Ok(x.neg()?), never),
        unary("sum", &[2, 3], (-1.0, 1.0), |x| Ok(x.sum()?), never),
        unary("mean", &[2, 3], (-1.0, 1.0), |x| Ok(x.mean()?), never),
        unary("abs", &[12], (-1.0, 1.0), |x| Ok(x.abs()?), |x| x.abs() < 10.0 * FD_STEP),
        unary("sq_norm", &[6], (-1.0, 1.0), |x| Ok(x.sq_norm()?), never),
        unary("sigmoid", &[6], (-4.0, 4.0), |x| Ok(x.sigmoid()?), never),
        unary("tanh", &[6], (-3.0, 3.0), |x| Ok(x.tanh()?), never),
        unary("cumsum/0", &[4, 5], (-1.0, 1.0), |x| Ok(x.cumsum(0)?), never),
        unary("cumsum/1", &[4, 5], (-1.0, 1.0), |x| Ok(x.cumsum(1)?), never),
        unary("soft_round", &[16], (-3.0, 3.0), |x| Ok(x.soft_round()?), near_half),
        unary("l2_normalize", &[6], (-1.0, 1.0), |x| Ok(x.l2_normalize()?), never),
        unary("reshape", &[2, 6], (-1.0, 1.0), |x| Ok(x.reshape(&[3, 4])?), never),
        unary("column", &[5, 3], (-1.0, 1.0), |x| Ok(x.column(1)?), never),
        unary("area_downsample", &[8, 6, 2], (0.0, 1.0), |x| Ok(x.area_downsample(2)?), never),
        unary("block_dct/forward", &[8, 16, 2], (0.0, 1.0), |x| Ok(x.block_dct(DctDirection::Forward)?), never),
        unary("block_dct/inverse", &[16, 8, 2], (-1.0, 1.0), |x| Ok(x.block_dct(DctDirection::Inverse)?), never),
        unary("resize_bilinear/down", &[9, 8, 3], (0.0, 1.0), |x| Ok(x.resize_bilinear(5, 6)?), never),
        unary("resize_bilinear/up", &[5, 4, 2], (0.0, 1.0), |x| Ok(x.resize_bilinear(12, 11)?), never),
        case(Suite::Numerics, "conv2d/image", |rng| {
            let k = uniform(&[3, 5], 0.0, 1.0, rng);
            let x = uniform(&[6, 7, 2], 0.0, 1.0, rng);
            probed(x, rng, |v| Ok(v.conv2d(v.tape().constant(k.clone()), Padding::SameZero)?), never)
        }),
        case(Suite::Numerics, "conv2d/kernel", |rng| {
            let img = uniform(&[6, 7, 2], 0.0, 1.0, rng);
            let k = uniform(&[3, 3], 0.0, 1.0, rng);
            probed(k, rng, |v| Ok(v.tape().constant(img.clone()).conv2d(v, Padding::Valid)?), never)
        }),
    ]
}

fn degradation_cases() -> Vec<Case> {
    let spec = |kernel: Kernel, scale: usize, jpeg: Option<u32>| DegradationSpec {
        kernel,
        scale,
        downsample: Downsample::Box,
        jpeg_quality: jpeg,
        ..DegradationSpec::identity()
    };
    let blur = spec(Kernel::gaussian(5, 1.0).expect("valid kernel"), 1, None);
    let down = spec(Kernel::identity(), 2, None);
    let full = spec(Kernel::gaussian(3, 0.8).expect("valid kernel"), 2, Some(75));
    vec![
        case(Suite::Degradation, "blur", move |rng| {
            probed(uniform(&[8, 8, 3], 0.0, 1.0, rng), rng, |v| degrade_var(v, &blur), never)
        }),
        case(Suite::Degradation, "box_downsample", move |rng| {
            probed(uniform(&[8, 8, 3], 0.0, 1.0, rng), rng, |v| degrade_var(v, &down), never)
        }),
        case(Suite::Degradation, "soft_jpeg", |rng| {
            probed(uniform(&[8, 8, 3], 0.0, 1.0, rng), rng, |v| soft_jpeg(v, 50), never)
        }),
        case(Suite::Degradation, "degrade/blur+box+jpeg", move |rng| {
            probed(uniform(&[16, 16, 3], 0.0, 1.0, rng), rng, |v| degrade_var(v, &full), never)
        }),
    ]
}

fn semantics_cases() -> Result<Vec<Case>> {
    let embedder = Embedder::from_spec(&EmbedderSpec::Toy {
        resolution: 8,
        dim: 16,
        seed: 3,
    })?;
    let gen = Generator::from_spec(&GeneratorSpec::desk(0, 1)?)?;
    let face = Embedder::from_spec(&EmbedderSpec::toy(0))?;
    let params = HistogramParams::new(8);
    let e1 = embedder.clone();
    Ok(vec![
        case(Suite::Semantics, "embed", move |rng| {
            probed(uniform(&[12, 10, 3], 0.0, 1.0, rng), rng, |v| e1.embed_var(v), never)
        }),
        case(Suite::Semantics, "identity_loss", move |rng| {
            let w_z = gen.sample_latent(rng);
            let z = face.embed(&gen.generate(&gen.sample_latent(rng))?)?;
            let w = gen.sample_latent(rng);
            check_gradient_skipping(
                |v| identity_loss(v, &w_z, &z, &gen, &face, 0.001),
                w.as_array(),
                FD_STEP,
                |_, _| false,
            )
        }),
        case(Suite::Semantics, "emotion_loss", |rng| {
            let d = normal(&[20], rng);
            let norm = d.norm();
            let dir = SemanticDirection::new("d".into(), d.data().iter().map(|v| v / norm).collect(), 0.0, 1.0)?;
            let w = uniform(&[4, 5], -1.0, 1.0, rng);
            check_gradient_skipping(|v| emotion_loss(v, &dir, 1.0), &w, FD_STEP, |_, _| false)
        }),
        case(Suite::Semantics, "soft_histogram/values", move |rng| {
            let weights = uniform(&[40], 0.1, 1.0, rng);
            let x = uniform(&[40], 0.0, 1.0, rng);
            probed(
                x,
                rng,
                |v| soft_histogram(v, v.tape().constant(weights.clone()), params),
                |v| near_kink(v, params, FD_STEP),
            )
        }),
        case(Suite::Semantics, "soft_histogram/weights", move |rng| {
            let values = uniform(&[40], 0.0, 1.0, rng);
            let x = uniform(&[40], 0.1, 1.0, rng);
            probed(x, rng, |v| soft_histogram(v.tape().constant(values.clone()), v, params), never)
        }),
        case(Suite::Semantics, "hist_loss", move |rng| {
            let b = uniform(&[5, 4, 3], 0.0, 1.0, rng);
            let mask_a = uniform(&[6, 6], 0.0, 1.0, rng);
            let mask_b = uniform(&[5, 4], 0.0, 1.0, rng);
            let a = uniform(&[6, 6, 3], 0.0, 1.0, rng);
            check_gradient_skipping(
                |v| hist_loss(v, &mask_a, v.tape().constant(b.clone()), &mask_b, params),
                &a,
                FD_STEP,
                |i, _| near_kink(a.data()[i], params, FD_STEP),
            )
        }),
    ])
}

fn objective_cases() -> Result<Vec<Case>> {
    let gen = Generator::from_spec(&GeneratorSpec::desk(0, 1)?)?;
    let embedder = Embedder::from_spec(&EmbedderSpec::toy(0))?;
    let directions: Vec<SemanticDirection> = gen
        .spec()
        .planted()
        .iter()
        .map(|p| SemanticDirection::new(p.name.clone(), p.direction.clone(), 0.0, 1.0))
        .collect::<Result<_>>()?;
    let config = RestoreConfig {
        emotion_target: Some(directions[0].name.clone()),
        degradation: DegradationSpec {
            kernel: Kernel::gaussian(3, 0.8)?,
            scale: 4,
            ..DegradationSpec::identity()
        },
        ..RestoreConfig::default()
    };
    Ok(vec![case(Suite::Objective, "total_loss", move |rng| {
        let truth = gen.generate(&gen.sample_latent(rng))?;
        let y = crate::degradation::degrade(&truth, &config.degradation)?;
        let w_z = gen.sample_latent(rng);
        let z: ImageBuffer<f64> = gen.generate(&w_z)?;
        let ctx = LossContext::new(&gen, &embedder, &y, &z, &w_z, &config, &directions)?;
        let w = gen.sample_latent(rng);
        check_gradient_skipping(|v| Ok::<_, Error>(total_loss(v, &ctx)?.0), w.as_array(), FD_STEP, |_, _| false)
    })])
}

/// Runs the cases of the selected suites.
pub fn run_gradcheck(suites: &[Suite]) -> Result<Vec<CaseResult>> {
    let mut cases = Vec::new();
    for suite in Suite::ALL.iter().filter(|s| suites.contains(s)) {
        cases.extend(match suite {
            Suite::Numerics => numerics_cases(),
            Suite::Degradation => degradation_cases(),
            Suite::Semantics => semantics_cases()?,
            Suite::Objective => objective_cases()?,
        });
    }
    cases
        .iter()
        .map(|c| {
            // Seeded by name so a case sees the same points whatever else runs.
            let seed = c
                .name
                .bytes()
                .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            let mut skipped = 0;
            for _ in 0..POINTS {
                let report = (c.check)(&mut rng)?;
                worst = worst.max(report.max_rel_error);
                skipped += report.skipped;
            }
            Ok(CaseResult {
                suite: c.suite,
                name: c.name.to_string(),
                points: POINTS,
                tolerance: c.tolerance,
                max_rel_error: worst,
                skipped,
            })
        })
        .collect()
}
