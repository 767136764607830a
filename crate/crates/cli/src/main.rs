//! `ddxnet`: train, evaluate, and inspect dilated-causal dense convolution
//! classifiers for multichannel time series.
//!
//! Exit codes: 0 success, 2 usage or configuration problem, 3 numerical
//! failure during training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddxnet_core::checkpoint::load_checkpoint;
use ddxnet_core::data::{apply_norm, batch_iter, load_binary, synth_generate, write_binary, Label, SynthSpec};
use ddxnet_core::metrics::{argmax_class, binary_auroc, fmt_sig6, report_json, Report};
use ddxnet_core::model::{DdxConfig, Head, Model};
use ddxnet_core::train::{class_probabilities, train_run, RunConfig};
use ddxnet_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "ddxnet", version, about = "DDxNet time-series classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset and write it as a DDX1 file.
    Synth {
        /// Number of classes.
        #[arg(long)]
        classes: usize,
        /// Channels per record.
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Samples per record.
        #[arg(long)]
        len: usize,
        /// Records to generate (balanced across classes).
        #[arg(long)]
        n: usize,
        /// Motif length in samples.
        #[arg(long, default_value_t = 64)]
        motif_len: usize,
        /// Gaussian noise standard deviation.
        #[arg(long, default_value_t = 0.3)]
        noise_std: f64,
        #[arg(long)]
        seed: u64,
        /// Output path (binary record file).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model according to a JSON run configuration.
    Train {
        /// Path to the run configuration document.
        config: PathBuf,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report output path; also echoed to stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Write per-record predicted classes and probabilities as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Print the architecture summary of a checkpoint or config file.
    Inspect {
        /// A `.ddxc` checkpoint or a JSON model/run configuration.
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<CoreError>() {
                Some(CoreError::Training(_)) | Some(CoreError::NonFiniteGradient { .. }) => {
                    ExitCode::from(3)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { classes, channels, len, n, motif_len, noise_std, seed, out } => {
            let spec = SynthSpec {
                num_classes: classes,
                channels,
                length: len,
                motif_length: motif_len,
                noise_std,
                num_records: n,
                seed,
            };
            let dataset = synth_generate(&spec)?;
            write_binary(&dataset, &out)?;
            let mut counts = vec![0usize; classes];
            for r in &dataset.records {
                if let Label::Class(c) = r.label {
                    counts[c] += 1;
                }
            }
            println!(
                "wrote {} records ({} channels x {} samples, {} classes) to {}",
                dataset.records.len(),
                channels,
                len,
                classes,
                out.display()
            );
            println!("class counts: {counts:?}");
            Ok(())
        }
        Command::Train { config, resume } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CoreError::io(&config, e))?;
            let run_config = RunConfig::from_json(&text)?;
            let stdout = std::io::stdout();
            let mut echo = stdout.lock();
            let outcome = train_run(&run_config, resume.as_deref(), Some(&mut echo))?;
            println!(
                "trained {} epoch(s); best val accuracy {}; final checkpoint {}",
                outcome.epochs.len(),
                fmt_sig6(outcome.best_val),
                outcome.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, data, out, batch_size } => {
            let loaded = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset_for(&loaded.model, &data, loaded.norm.as_ref())?;
            let report = evaluate(&loaded.model, &dataset, batch_size)?;
            std::fs::write(&out, &report).map_err(|e| CoreError::io(&out, e))?;
            print!("{report}");
            Ok(())
        }
        Command::Predict { checkpoint, data, out, batch_size } => {
            let loaded = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset_for(&loaded.model, &data, loaded.norm.as_ref())?;
            let head = loaded.model.config().head;
            let mut csv = String::from("record_id,pred");
            for k in 0..loaded.model.config().num_classes {
                csv.push_str(&format!(",p{k}"));
            }
            csv.push('\n');
            // Unshuffled batches preserve dataset order.
            let mut next_record = dataset.records.iter();
            for batch in batch_iter(&dataset, batch_size, false, 0, 0)? {
                let logits = loaded.model.infer(&batch.x)?;
                let probs = class_probabilities(&logits, head)?;
                let (_, k) = logits.dims2()?;
                for (i, prob_row) in probs.iter().enumerate() {
                    let record = next_record.next().expect("batches cover the dataset");
                    let pred = match head {
                        Head::MultiClass => {
                            argmax_class(&logits.data()[i * k..(i + 1) * k]).to_string()
                        }
                        Head::MultiLabel => prob_row
                            .iter()
                            .map(|&p| if p > 0.5 { '1' } else { '0' })
                            .collect::<String>(),
                    };
                    let row: Vec<String> =
                        prob_row.iter().map(|&p| fmt_sig6(p as f64)).collect();
                    csv.push_str(&format!("{},{pred},{}\n", record.record_id, row.join(",")));
                }
            }
            std::fs::write(&out, &csv).map_err(|e| CoreError::io(&out, e))?;
            println!("wrote {} predictions to {}", dataset.records.len(), out.display());
            Ok(())
        }
        Command::Inspect { input } => {
            let config = read_config(&input)?;
            print_summary(&config);
            Ok(())
        }
    }
}

/// Loads a dataset, verifies its channel count against the model, and applies
/// the checkpoint's stored normalization statistics.
fn load_dataset_for(
    model: &Model<f32>,
    data: &std::path::Path,
    norm: Option<&ddxnet_core::data::NormStats>,
) -> anyhow::Result<ddxnet_core::data::Dataset> {
    let dataset = load_binary(data)?;
    let expected = model.config().in_channels;
    let actual = dataset.channels();
    if actual != expected {
        return Err(CoreError::Config(format!(
            "channel mismatch: checkpoint expects {expected}, dataset has {actual}"
        ))
        .into());
    }
    match norm {
        Some(stats) => Ok(apply_norm(&dataset, stats)?),
        None => {
            log::warn!("checkpoint carries no normalization statistics; evaluating raw data");
            Ok(dataset)
        }
    }
}

fn evaluate(
    model: &Model<f32>,
    dataset: &ddxnet_core::data::Dataset,
    batch_size: usize,
) -> anyhow::Result<String> {
    let k = model.config().num_classes;
    match model.config().head {
        Head::MultiClass => {
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            let mut scores1 = Vec::new();
            for batch in batch_iter(dataset, batch_size, false, 0, 0)? {
                let logits = model.infer(&batch.x)?;
                for (i, label) in batch.labels.iter().enumerate() {
                    let Label::Class(c) = label else {
                        return Err(CoreError::Schema(
                            "multi-label dataset under a multi-class checkpoint".into(),
                        )
                        .into());
                    };
                    pred.push(argmax_class(&logits.data()[i * k..(i + 1) * k]));
                    truth.push(*c);
                }
                if k == 2 {
                    let probs = class_probabilities(&logits, Head::MultiClass)?;
                    scores1.extend(probs.iter().map(|p| p[1] as f64));
                }
            }
            let report = Report::from_predictions(
                &pred,
                &truth,
                k,
                if k == 2 { Some(&scores1) } else { None },
            )?;
            Ok(report_json(&report))
        }
        Head::MultiLabel => {
            // Element accuracy plus per-label AUROC where both classes occur.
            let mut correct = 0u64;
            let mut total = 0u64;
            let mut scores: Vec<Vec<f64>> = vec![Vec::new(); k];
            let mut truths: Vec<Vec<u8>> = vec![Vec::new(); k];
            for batch in batch_iter(dataset, batch_size, false, 0, 0)? {
                let logits = model.infer(&batch.x)?;
                for (i, label) in batch.labels.iter().enumerate() {
                    let Label::Multi(bits) = label else {
                        return Err(CoreError::Schema(
                            "multi-class dataset under a multi-label checkpoint".into(),
                        )
                        .into());
                    };
                    for (j, &bit) in bits.iter().enumerate() {
                        let z = logits.data()[i * k + j];
                        if (z > 0.0) == (bit == 1) {
                            correct += 1;
                        }
                        total += 1;
                        scores[j].push(ddxnet_core::ops::sigmoid(z) as f64);
                        truths[j].push(bit);
                    }
                }
            }
            let mut out = String::from("{\n");
            out.push_str(&format!("  \"num_labels\": {k},\n"));
            out.push_str(&format!(
                "  \"element_accuracy\": {},\n",
                fmt_sig6(correct as f64 / total as f64)
            ));
            let aurocs: Vec<String> = (0..k)
                .map(|j| match binary_auroc(&scores[j], &truths[j]) {
                    Ok(a) => fmt_sig6(a),
                    Err(_) => "null".into(),
                })
                .collect();
            out.push_str(&format!("  \"per_label_auroc\": [{}]\n", aurocs.join(", ")));
            out.push_str("}\n");
            Ok(out)
        }
    }
}

fn read_config(input: &std::path::Path) -> anyhow::Result<DdxConfig> {
    if input.extension().is_some_and(|e| e == "ddxc") {
        let loaded = load_checkpoint(input)?;
        return Ok(loaded.model.config().clone());
    }
    let text = std::fs::read_to_string(input).map_err(|e| CoreError::io(input, e))?;
    let config = if let Ok(config) = serde_json::from_str::<DdxConfig>(&text) {
        config
    } else {
        let run: RunConfig = RunConfig::from_json(&text)
            .map_err(|e| CoreError::Config(format!("{}: {e}", input.display())))?;
        run.model
    };
    config.validate()?;
    Ok(config)
}

fn print_summary(config: &DdxConfig) {
    println!("architecture");
    println!("  head: {:?} over {} classes", config.head, config.num_classes);
    println!("  input channels: {}", config.in_channels);
    println!(
        "  stem: {} channels, kernel {}",
        config.stem_channels, config.stem_kernel
    );
    println!(
        "  stages: {} x {} blocks, growth rate {}, kernel {}, bottleneck {}x",
        config.stages,
        config.blocks_per_stage,
        config.growth_rate,
        config.kernel_size,
        config.bottleneck_factor
    );
    let entries = config.stage_entry_channels().expect("validated config");
    let schedule = config.dilation_schedule();
    for (s, entry) in entries.iter().enumerate() {
        let exit = entry + config.blocks_per_stage * config.growth_rate;
        let progression: Vec<String> = (0..=config.blocks_per_stage)
            .map(|l| (entry + l * config.growth_rate).to_string())
            .collect();
        println!(
            "  stage {s}: channels {} (dilations {:?})",
            progression.join(" -> "),
            schedule[s]
        );
        if s + 1 < entries.len() {
            println!(
                "  transition {s}: {} -> {} channels, time halved",
                exit,
                entries[s + 1]
            );
        }
    }
    println!(
        "  head input: {} channels",
        config.final_channels().expect("validated config")
    );
    println!("receptive field: {} samples", config.receptive_field());
    println!("minimum input length: {} samples", config.min_input_len());
    println!("parameter count: {}", config.param_count());
}
