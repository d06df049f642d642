//! `sair`: degrade, invert, learn directions, restore, check gradients and run
//! the seeded evaluation protocols.
//!
//! Exit codes: 0 success, 2 invalid input or usage, 1 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use sair::degradation::{degrade, DegradationSpec};
use sair::directions::{discover_direction, AttributeLabeler, FitParams};
use sair::generator::{invert, Generator, GeneratorSpec, InversionConfig};
use sair::harness::{run_gradcheck, run_protocol, Protocol, Suite};
use sair::image::{load_png, save_png};
use sair::json::{read_json, write_json};
use sair::restore::{restore, RestoreConfig};
use sair::semantics::{Embedder, EmbedderSpec, SemanticDirection};

#[derive(Parser)]
#[command(name = "sair", version, about = "Reference-guided latent-space image restoration")]
struct Cli {
    /// Seed for every random choice. Defaults to 0.
    #[arg(long, global = true, env = "SAIR_SEED")]
    seed: Option<u64>,
    /// Worker threads for `eval`; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a degradation spec to an image. `--seed` replaces the spec's
    /// noise seed.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find a latent whose generated image matches an image.
    Invert {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an attribute direction from labelled generator samples.
    LearnDirection {
        #[arg(long)]
        gen: PathBuf,
        /// `planted:FILE` with a JSON direction, or `cmd:COMMAND` reading a
        /// PNG on stdin and printing 0 or 1.
        #[arg(long)]
        labeler: String,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value = "attr")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a degraded image with a reference chosen from a pool.
    Restore {
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of PNG candidates, taken in file-name order.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        /// Embedder spec. Defaults to the seeded toy embedder.
        #[arg(long)]
        embedder: Option<PathBuf>,
        /// Attribute direction file; repeatable.
        #[arg(long)]
        direction: Vec<PathBuf>,
        /// Overrides the configured emotion target.
        #[arg(long)]
        emotion_target: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Module::All)]
        module: Module,
    },
    /// Run a seeded evaluation protocol on the desk-scale scenario.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Base restoration config. Defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Module {
    All,
    Numerics,
    Degradation,
    Semantics,
    Objective,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    EndToEnd,
    Ablation,
    Robustness,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.downcast_ref::<sair::Error>().is_some_and(sair::Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let threads = if matches!(cli.command, Command::Eval { .. }) { cli.jobs } else { 1 };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Degrade { input, spec, out } => {
            let mut spec: DegradationSpec = read_json(&spec)?;
            if let Some(s) = cli.seed {
                spec.noise_seed = s;
            }
            save_png(&degrade(&load_png(&input)?, &spec)?, &out)?;
        }
        Command::Invert {
            gen,
            input,
            iters,
            lr,
            out,
        } => {
            let gen = load_generator(&gen)?;
            let res = invert(&gen, &load_png(&input)?, &InversionConfig::new(iters, lr, seed))?;
            write_json(&res, &out)?;
        }
        Command::LearnDirection {
            gen,
            labeler,
            n,
            name,
            out,
        } => {
            let gen = load_generator(&gen)?;
            let labeler = parse_labeler(&labeler)?;
            let dir = discover_direction(&gen, &labeler, &name, n, seed, &FitParams::default())?;
            eprintln!("{name}: training accuracy {:.4}", dir.accuracy);
            write_json(&dir, &out)?;
        }
        Command::Restore {
            input,
            pool,
            config,
            gen,
            embedder,
            direction,
            emotion_target,
            out,
            report,
        } => {
            let mut config: RestoreConfig = match config {
                Some(p) => read_json(&p)?,
                None => RestoreConfig::default(),
            };
            if emotion_target.is_some() {
                config.emotion_target = emotion_target;
            }
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let gen = load_generator(&gen)?;
            let embedder = Embedder::from_spec(&match embedder {
                Some(p) => read_json(&p)?,
                None => EmbedderSpec::toy(seed),
            })?;
            let directions = direction
                .iter()
                .map(|p| read_json::<SemanticDirection>(p))
                .collect::<sair::Result<Vec<_>>>()?;
            let res = restore(
                &load_png(&input)?,
                &load_pool(&pool)?,
                &config,
                &gen,
                &embedder,
                &directions,
            )?;
            eprintln!(
                "reference {}, final loss {:.6} (data {:.6}) in {:.1}s",
                res.reference, res.final_loss.total, res.final_loss.data, res.seconds
            );
            res.save(&out, &report)?;
        }
        Command::Gradcheck { module } => {
            let suites: &[Suite] = match module {
                Module::All => &Suite::ALL,
                Module::Numerics => &[Suite::Numerics],
                Module::Degradation => &[Suite::Degradation],
                Module::Semantics => &[Suite::Semantics],
                Module::Objective => &[Suite::Objective],
            };
            let results = run_gradcheck(suites)?;
            for r in &results {
                println!(
                    "{} {:?} {} max rel error {:.2e} (tolerance {:.0e}, {} points{})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.suite,
                    r.name,
                    r.max_rel_error,
                    r.tolerance,
                    r.points,
                    if r.skipped > 0 { format!(", {} skipped", r.skipped) } else { String::new() }
                );
            }
            if results.iter().any(|r| !r.passed()) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval {
            protocol,
            trials,
            config,
            out,
        } => {
            let base: RestoreConfig = match config {
                Some(p) => read_json(&p)?,
                None => RestoreConfig::default(),
            };
            let protocol = match protocol {
                ProtocolArg::EndToEnd => Protocol::EndToEnd,
                ProtocolArg::Ablation => Protocol::Ablation,
                ProtocolArg::Robustness => Protocol::Robustness,
            };
            let report = run_protocol(protocol, trials, seed, &base)?;
            for a in &report.aggregates {
                println!(
                    "{:<12} psnr {:.2} ± {:.2} (baseline {:.2}), similarity {:.4}, hist {:.5}, n {}",
                    a.group,
                    a.psnr.mean,
                    a.psnr.std,
                    a.baseline_psnr.mean,
                    a.similarity.mean,
                    a.hist_to_truth.mean,
                    a.trials
                );
            }
            write_json(&report, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_generator(path: &Path) -> anyhow::Result<Generator> {
    Ok(Generator::from_spec(&GeneratorSpec::load(path)?)?)
}

/// `planted:FILE` holds `{"direction": [...], "threshold": t}` (threshold
/// optional) or a bare array.
fn parse_labeler(arg: &str) -> anyhow::Result<AttributeLabeler> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum PlantedFile {
        Bare(Vec<f64>),
        Full {
            direction: Vec<f64>,
            #[serde(default)]
            threshold: f64,
        },
    }
    if let Some(path) = arg.strip_prefix("planted:") {
        let (direction, threshold) = match read_json::<PlantedFile>(Path::new(path))? {
            PlantedFile::Bare(d) => (d, 0.0),
            PlantedFile::Full { direction, threshold } => (direction, threshold),
        };
        Ok(AttributeLabeler::Planted { direction, threshold })
    } else if let Some(command) = arg.strip_prefix("cmd:") {
        Ok(AttributeLabeler::Command {
            command: command.to_string(),
        })
    } else {
        Err(sair::Error::InvalidInput(format!("labeler must start with planted: or cmd:, got {arg:?}")).into())
    }
}

fn load_pool(dir: &Path) -> anyhow::Result<Vec<sair::Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading pool directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    if paths.is_empty() {
        bail!(sair::Error::InvalidInput(format!("no PNG files in {}", dir.display())));
    }
    Ok(paths.iter().map(|p| load_png(p)).collect::<sair::Result<_>>()?)
}
