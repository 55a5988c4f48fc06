//! The `bbridge` command line.

use std::path::{Path, PathBuf};

use bbridge_core::bridge::{SampleOptions, TraceMode};
use bbridge_core::data::{make_pointcloud_dataset, make_scene_dataset};
use bbridge_core::{ConditionPayload, RngState, Tensor};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::load_checkpoint;
use crate::checks::{render_table, run_all, Fault};
use crate::config::ExperimentConfig;
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::format::{load_tensor, save_tensor, write_file};
use crate::ingest::{ingest_image_pairs, IngestKind};
use crate::pipeline::{evaluate, generate, parse_cond, record_rngs, EvalOptions, Metric};
use crate::pnm::{read_image, write_image};
use crate::trainer::{init_checkpoint, to_latents, train_loop};

#[derive(Debug, Parser)]
#[command(
    name = "bbridge",
    version,
    about = "Conditional Brownian-bridge diffusion on toy paired data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Points,
    Scenes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CondKind {
    None,
    Label,
    Layout,
    Semantic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceArg {
    None,
    Sparse,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    CepsSign,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the built-in numerical checks and print a pass/fail table.
    Selfcheck {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Generate a synthetic paired dataset.
    MakeData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene edge length in pixels.
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
    /// Build a dataset from directories of PGM/PPM files matched by file stem.
    Ingest {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        cond: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: CondKind,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.csv, periodic checkpoints and final.bbck.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the reverse chain from pre-event inputs.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// A single pre-event input (.pgm, .ppm or .bbt).
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        pre: Option<PathBuf>,
        /// Use the `pre` images (and conditions) of a dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// label:<int> | mask:<path.pgm> | semantic:<path.pgm> | none
        #[arg(long)]
        cond: Option<String>,
        /// Number of reverse steps; defaults to the trained T.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stochastic: bool,
        #[arg(long, value_enum, default_value_t = TraceArg::None)]
        trace: TraceArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate from a dataset and write a JSON metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset whose `post` images are the MMD reference; defaults to --data.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "mode_accuracy,mmd")]
        metrics: Vec<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn load_input(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm" | "ppm") => read_image(path),
        _ => load_tensor(path),
    }
}

fn is_image(t: &Tensor) -> bool {
    t.rank() == 3 && matches!(t.shape()[0], 1 | 3)
}

#[derive(Serialize)]
struct SampleEntry {
    index: usize,
    output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_steps: Option<Vec<usize>>,
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Selfcheck { inject_fault } => {
            let fault = match inject_fault {
                Some(FaultArg::CepsSign) => Fault::CepsSignFlip,
                None => Fault::None,
            };
            let outcomes = run_all(fault);
            print!("{}", render_table(&outcomes));
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if failed.is_empty() {
                println!("all {} checks passed", outcomes.len());
                Ok(0)
            } else {
                println!("failed: {}", failed.join(", "));
                Ok(1)
            }
        }
        Command::MakeData {
            kind,
            n,
            out,
            seed,
            size,
        } => {
            let mut rng = RngState::new(seed);
            let data = match kind {
                DataKind::Points => make_pointcloud_dataset(n, &mut rng)?,
                DataKind::Scenes => make_scene_dataset(n, size, size, &mut rng)?,
            };
            write_dataset(&out, &data)?;
            println!("wrote {} records to {}", data.len(), out.display());
            Ok(0)
        }
        Command::Ingest {
            pre,
            post,
            cond,
            kind,
            classes,
            out,
        } => {
            let kind = match kind {
                CondKind::None => IngestKind::None,
                CondKind::Label => IngestKind::Label,
                CondKind::Layout => IngestKind::Layout,
                CondKind::Semantic => IngestKind::Semantic { classes },
            };
            let data = ingest_image_pairs(&pre, &post, cond.as_deref(), kind)?;
            write_dataset(&out, &data)?;
            println!("wrote {} records to {}", data.len(), out.display());
            Ok(0)
        }
        Command::Train {
            config,
            data,
            out,
            resume,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let data = read_dataset(&data)?;
            let mut ck = match resume {
                Some(path) => load_checkpoint(&path)?,
                None => {
                    let (ck, report) = init_checkpoint(&config, &data)?;
                    if let Some(r) = report {
                        println!(
                            "codec: {} epochs, final loss {:.6}",
                            r.losses.len(),
                            r.losses.last().copied().unwrap_or(0.0)
                        );
                    }
                    ck
                }
            };
            let latents = to_latents(&ck.codec, &data)?;
            let every = config.checkpoint_every;
            let outputs = train_loop(&mut ck, &latents, &out, every, |m| {
                if m.step % 100 == 0 {
                    println!("step {:>6}  loss {:.6}  grad_norm {:.4}", m.step, m.loss, m.grad_norm);
                }
            })?;
            println!(
                "wrote {} and {}",
                outputs.final_path.display(),
                outputs.metrics_path.display()
            );
            Ok(0)
        }
        Command::Sample {
            ckpt,
            pre,
            data,
            cond,
            steps,
            n,
            seed,
            stochastic,
            trace,
            out,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let classes = ck.state.params.config.condition.classes;
            let override_cond = cond.as_deref().map(|c| parse_cond(c, classes)).transpose()?;
            let inputs: Vec<(Tensor, ConditionPayload)> = match (&pre, &data) {
                (Some(p), _) => {
                    let x = load_input(p)?;
                    let c = override_cond.clone().unwrap_or(ConditionPayload::None);
                    vec![(x, c); n.unwrap_or(1)]
                }
                (None, Some(d)) => {
                    let records = read_dataset(d)?;
                    let take = n.unwrap_or(records.len()).min(records.len());
                    records
                        .into_iter()
                        .take(take)
                        .map(|s| (s.pre, override_cond.clone().unwrap_or(s.cond)))
                        .collect()
                }
                (None, None) => return Err(CliError::Validation("give --pre or --data".into())),
            };
            let options = SampleOptions {
                steps: steps.unwrap_or(ck.state.schedule.steps()),
                stochastic,
                trace: if trace == TraceArg::Full {
                    TraceMode::Full
                } else {
                    TraceMode::Sparse(32)
                },
            };
            let mut entries = Vec::with_capacity(inputs.len());
            for (i, ((x, c), mut rng)) in inputs.iter().zip(record_rngs(seed, inputs.len())).enumerate() {
                let (y, tr) = generate(&ck, x, c, options, &mut rng)?;
                let output = format!("sample_{i:04}.bbt");
                save_tensor(&out.join(&output), &y)?;
                let image = if is_image(&y) {
                    let name = format!("sample_{i:04}.{}", if y.shape()[0] == 1 { "pgm" } else { "ppm" });
                    write_image(&out.join(&name), &y)?;
                    Some(name)
                } else {
                    None
                };
                let (trace_file, trace_steps) = if trace == TraceArg::None {
                    (None, None)
                } else {
                    let name = format!("trace_{i:04}.bbt");
                    let mut shape = vec![tr.steps.len()];
                    shape.extend_from_slice(tr.final_latent.shape());
                    let data: Vec<f64> = tr.steps.iter().flat_map(|(_, z)| z.data().iter().copied()).collect();
                    save_tensor(&out.join(&name), &Tensor::new(shape, data)?)?;
                    (Some(name), Some(tr.steps.iter().map(|(t, _)| *t).collect()))
                };
                entries.push(SampleEntry {
                    index: i,
                    output,
                    image,
                    trace: trace_file,
                    trace_steps,
                });
            }
            write_json(&out.join("samples.json"), &entries)?;
            println!("wrote {} samples to {}", entries.len(), out.display());
            Ok(0)
        }
        Command::Eval {
            ckpt,
            data,
            reference,
            metrics,
            n,
            steps,
            seed,
            threshold,
            out,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let metrics: Vec<Metric> = metrics.iter().map(|m| m.parse()).collect::<Result<_>>()?;
            let mut records = read_dataset(&data)?;
            let reference = match reference {
                Some(r) => read_dataset(&r)?,
                None => records.clone(),
            };
            if let Some(n) = n {
                records.truncate(n);
            }
            let opts = EvalOptions {
                steps: steps.unwrap_or(ck.state.schedule.steps()),
                seed,
                threshold,
            };
            let report = evaluate(&ck, &records, &reference, &metrics, &opts)?;
            write_json(&out, &report)?;
            println!("{}", report.summary());
            Ok(0)
        }
    }
}

/// Runs the parsed command and maps any error to its exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
