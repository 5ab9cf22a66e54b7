//! `factual` — synthesize SAR-like data, train robust classifiers, attack
//! them, and report clean/robust accuracy.

mod config;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use config::Resolved;
use factual_core::attacks::{build_attack, ClassifierScorer};
use factual_core::data::{
    build_triples, generate_dataset, load_dataset, save_dataset, save_triples, Dataset, Split,
};
use factual_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use factual_core::pipeline::{
    evaluate_with_meta, finetune, pretrain, run_standard_training, write_report, ReportMeta,
    TrainOutcome,
};
use factual_core::Error as CoreError;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "factual",
    about = "Adversarially robust SAR-like image classification: data synthesis, contrastive pre-training, fine-tuning, attacks, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Key-value configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// L-infinity attack budget in pixel units.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Whole-image attack iteration count.
    #[arg(long, global = true)]
    pgd_steps: Option<usize>,
    /// Scatterer count of the target-region attack.
    #[arg(long, global = true)]
    otsa_scatterers: Option<usize>,
    /// Iteration count of the target-region attack.
    #[arg(long, global = true)]
    otsa_steps: Option<usize>,
    /// Contrastive temperature.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Epoch count for the invoked training stage.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Batch size in original images.
    #[arg(long, global = true)]
    batch: Option<usize>,
    /// Fine-tune only the classifier head.
    #[arg(long, global = true)]
    freeze_encoder: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset file.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of target classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Images per class.
        #[arg(long)]
        per_class: Option<usize>,
        /// Scene side length.
        #[arg(long)]
        size: Option<usize>,
        /// Mark the file as a test split.
        #[arg(long)]
        test: bool,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised adversarial contrastive pre-training.
    Pretrain {
        #[command(flatten)]
        common: CommonOpts,
        /// Training dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised adversarial fine-tuning from a checkpoint.
    Finetune {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        /// Pre-trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fine-tune on clean views only (ablation).
        #[arg(long)]
        clean_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean-only baseline training.
    TrainSt {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a perturbed dataset (or triples) from a checkpoint.
    Attack {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Attack name: fgsm, pgd, or otsa.
        #[arg(long, default_value = "pgd")]
        attack: String,
        /// Emit the three-view triple file instead of a perturbed dataset.
        #[arg(long)]
        triples: bool,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute clean and robust accuracy and emit the metrics report.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Test dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run gradient checks and oracle suites; nonzero exit on any failure.
    Selftest {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FACTUAL_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; usage problems are user errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let user = e
                .downcast_ref::<CoreError>()
                .map(CoreError::is_user_error)
                .unwrap_or(true);
            ExitCode::from(if user { 1 } else { 2 })
        }
    }
}

fn resolve(common: &CommonOpts, command: &str) -> anyhow::Result<Resolved> {
    let mut r = Resolved::from_file(common.config.as_deref())?;
    r.command = command.to_string();
    if let Some(v) = common.seed {
        r.seed = v;
    }
    if let Some(v) = common.threads {
        r.threads = v;
    }
    if let Some(v) = common.epsilon {
        r.epsilon = v;
    }
    if let Some(v) = common.pgd_steps {
        r.pgd_steps = v;
    }
    if let Some(v) = common.otsa_scatterers {
        r.otsa_scatterers = v;
    }
    if let Some(v) = common.otsa_steps {
        r.otsa_steps = v;
    }
    if let Some(v) = common.tau {
        r.tau = v;
    }
    if let Some(v) = common.epochs {
        r.epochs = v;
    }
    if let Some(v) = common.batch {
        r.batch = v;
    }
    if common.freeze_encoder {
        r.freeze_encoder = true;
    }
    r.validate()?;
    if r.threads > 0 {
        // ignore the error when a pool already exists (tests call run twice)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(r.threads)
            .build_global();
    }
    Ok(r)
}

fn require_exists(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("input path {} does not exist", path.display());
    }
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    require_exists(path)?;
    Ok(load_dataset(path)?)
}

fn load_model(path: &Path) -> anyhow::Result<ModelParams> {
    require_exists(path)?;
    Ok(load_checkpoint(path)?)
}

fn write_loss_history(dir: &Path, name: &str, outcome: &TrainOutcome) -> anyhow::Result<()> {
    let mut text = String::new();
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        text.push_str(&format!("{epoch} {loss}\n"));
    }
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData {
            common,
            classes,
            per_class,
            size,
            test,
            out,
        } => {
            let mut r = resolve(&common, "gen-data")?;
            if let Some(v) = classes {
                r.classes = v;
            }
            if let Some(v) = per_class {
                r.per_class = v;
            }
            if let Some(v) = size {
                r.size = v;
            }
            r.echo(&out, false)?;
            let split = if test { Split::Test } else { Split::Train };
            let ds = generate_dataset(r.classes, r.per_class, &r.scene_config(), r.seed, split)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} images ({} classes) to {}",
                ds.images.len(),
                ds.class_count,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Pretrain { common, data, out } => {
            let r = resolve(&common, "pretrain")?;
            let ds = load_data(&data)?;
            r.echo(&out, true)?;
            let input = ds.images.first().map(|im| im.height).unwrap_or(0);
            let cfg = r.train_config(input, ds.class_count);
            let outcome = pretrain(&ds, &cfg)?;
            save_checkpoint(&outcome.params, &out.join("pretrained.fctc"))?;
            write_loss_history(&out, "pretrain_loss.txt", &outcome)?;
            println!(
                "pre-trained {} epochs ({} steps); final contrastive loss {:.6}",
                outcome.epoch_losses.len(),
                outcome.optimizer_steps,
                outcome.epoch_losses.last().unwrap()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Finetune {
            common,
            data,
            checkpoint,
            clean_only,
            out,
        } => {
            let mut r = resolve(&common, "finetune")?;
            if clean_only {
                r.clean_only = true;
            }
            let ds = load_data(&data)?;
            let params = load_model(&checkpoint)?;
            r.echo(&out, true)?;
            let cfg = r.train_config(params.arch.input, ds.class_count);
            let outcome = finetune(&params, &ds, &cfg)?;
            save_checkpoint(&outcome.params, &out.join("finetuned.fctc"))?;
            write_loss_history(&out, "finetune_loss.txt", &outcome)?;
            println!(
                "fine-tuned {} epochs; final cross-entropy {:.6}",
                outcome.epoch_losses.len(),
                outcome.epoch_losses.last().unwrap()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::TrainSt { common, data, out } => {
            let r = resolve(&common, "train-st")?;
            let ds = load_data(&data)?;
            r.echo(&out, true)?;
            let input = ds.images.first().map(|im| im.height).unwrap_or(0);
            let cfg = r.train_config(input, ds.class_count);
            let outcome = run_standard_training(&ds, &cfg)?;
            save_checkpoint(&outcome.params, &out.join("standard.fctc"))?;
            write_loss_history(&out, "st_loss.txt", &outcome)?;
            println!(
                "standard training {} epochs; final cross-entropy {:.6}",
                outcome.epoch_losses.len(),
                outcome.epoch_losses.last().unwrap()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Attack {
            common,
            data,
            checkpoint,
            attack,
            triples,
            out,
        } => {
            let r = resolve(&common, "attack")?;
            let ds = load_data(&data)?;
            let params = load_model(&checkpoint)?;
            r.echo(&out, false)?;
            let scorer = ClassifierScorer { params: &params };

            if triples {
                let built = build_triples(
                    &ds.images,
                    &scorer,
                    &r.img_attack(),
                    &r.obj_attack(),
                    &r.otsa_params(),
                    r.seed,
                    r.augment,
                )?;
                save_triples(&built, ds.class_count, &out)?;
                println!("wrote {} triples to {}", built.len(), out.display());
                return Ok(ExitCode::SUCCESS);
            }

            let cfg = match attack.as_str() {
                "otsa" => r.obj_attack(),
                _ => r.img_attack(),
            };
            let runner = build_attack(&attack, &cfg, &r.otsa_params())?;
            let perturbed = ds
                .images
                .par_iter()
                .enumerate()
                .map(|(i, image)| {
                    let outcome = runner
                        .run(
                            &scorer,
                            image,
                            factual_core::seed::derive(r.seed, &[0xA77, i as u64]),
                        )
                        .map_err(|e| e.at_sample(i))?;
                    outcome.perturbation.apply_to(image)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let out_ds = Dataset {
                images: perturbed,
                class_count: ds.class_count,
                split: ds.split,
                seed: r.seed,
            };
            save_dataset(&out_ds, &out)?;
            println!(
                "wrote {} {}-perturbed images to {}",
                out_ds.images.len(),
                runner.name(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Evaluate {
            common,
            data,
            checkpoint,
            out,
        } => {
            let r = resolve(&common, "evaluate")?;
            let ds = load_data(&data)?;
            let params = load_model(&checkpoint)?;
            r.echo(&out, true)?;
            let report = evaluate_with_meta(
                &params,
                &ds,
                &r.eval_config(),
                ReportMeta {
                    seed: r.seed,
                    config_hash: r.hash(),
                },
            )?;
            write_report(&report, &out)?;
            println!(
                "ta {:.2} ra {:.2} aa {:.2} gap {:.2} (pgd {:.2}, otsa {:.2})",
                report.ta, report.ra, report.aa, report.gap, report.ra_pgd, report.ra_otsa
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Selftest { common } => {
            let r = resolve(&common, "selftest")?;
            let reports = factual_core::selftest::run_all(r.seed);
            let mut failed = 0usize;
            for c in &reports {
                println!(
                    "{} {} — {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                if !c.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", reports.len());
                Ok(ExitCode::from(2))
            } else {
                println!("all {} checks passed", reports.len());
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}
