//! Command-line surface. Every verb is a thin wrapper over library calls so
//! workflows stay reproducible from (files, seed) alone: no hidden state, no
//! timestamps in outputs.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis;
use crate::compress::{remove_positional_conv, select_layers, tie_weights};
use crate::deploy::{
    bench_rtf, energy_reduction, fleet_projection, parse_trace, simulate_meeting, trigger_interval,
    EnergyScenario,
};
use crate::io::{load_clip, load_model, save_model};
use crate::metrics::{parse_scores, roc_curve, tpr_at_fpr};
use crate::model::{build_model, infer, ClassLabel, Model, ModelConfig};
use crate::quant::{quantize_model, QuantPolicy};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "wsi",
    version,
    about = "Compression toolkit and int8 runtime for an on-device speech interruption detector"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Initialize a model from a config file and save it.
    Build {
        /// key=value config, may start from `preset=<name>`
        #[arg(long)]
        config: PathBuf,
        /// weight initialization seed
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply compression steps in the given order and save the result.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        /// drop-pos-conv | select-layers=i,j,k | tie=N | quantize
        #[arg(long, num_args = 1.., required = true)]
        steps: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter, MAC, size, and component-share tables for a model.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// clip length for the MAC count (defaults to the model's)
        #[arg(long)]
        clip_seconds: Option<f64>,
        /// machine-readable `component.metric = value` lines
        #[arg(long)]
        kv: bool,
    },
    /// Score one clip.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// also print the pooled embedding vector
        #[arg(long)]
        emit_embedding: bool,
    },
    /// Wall-clock benchmark: real-time factor plus memory accounting.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// total runs; the first is warm-up and not timed
        #[arg(long)]
        reps: usize,
    },
    /// TPR at an FPR budget over a score file, with the full curve.
    Roc {
        #[arg(long)]
        scores: PathBuf,
        /// positive class name, e.g. failed_interruption
        #[arg(long)]
        positive: String,
        #[arg(long, default_value_t = 0.01)]
        fpr: f64,
    },
    /// Run the overlap-gated trigger pipeline over an activity trace.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// seed for the synthetic clip at each trigger
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Energy reduction factors and the fleet-scale projection.
    Energy {
        /// key=value scenario file; omitted = the measured deployment defaults
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

enum Step {
    DropPosConv,
    SelectLayers(Vec<usize>),
    Tie(usize),
    Quantize,
}

fn parse_step(s: &str) -> Result<Step> {
    if s == "drop-pos-conv" {
        return Ok(Step::DropPosConv);
    }
    if s == "quantize" {
        return Ok(Step::Quantize);
    }
    if let Some(list) = s.strip_prefix("select-layers=") {
        let mut layers = Vec::new();
        for part in list.split(',') {
            layers.push(part.trim().parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("bad layer index {part:?} in step {s:?}"))
            })?);
        }
        return Ok(Step::SelectLayers(layers));
    }
    if let Some(n) = s.strip_prefix("tie=") {
        let group = n
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad group size in step {s:?}")))?;
        return Ok(Step::Tie(group));
    }
    Err(Error::InvalidArgument(format!(
        "unknown step {s:?}; expected drop-pos-conv, select-layers=i,j,k, tie=N, or quantize"
    )))
}

fn read_to_string(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn load_clip_for(model: &Model, path: &Path) -> Result<crate::model::ClipInput> {
    let cfg = model.config();
    let (clip, truncated) = load_clip(path, cfg.sample_rate_hz as u32, cfg.clip_samples())?;
    if truncated {
        eprintln!(
            "warning: clip longer than {} s, using the first {} samples per channel",
            cfg.clip_seconds,
            cfg.clip_samples()
        );
    }
    Ok(clip)
}

fn describe_written(m: &Model, path: &Path) -> Result<String> {
    let bytes = std::fs::metadata(path)?.len();
    Ok(format!(
        "wrote {}: {} params, {} layers, {} bytes",
        path.display(),
        m.param_count(),
        m.config().num_layers,
        bytes
    ))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build { config, seed, out } => {
            let cfg = ModelConfig::from_kv_text(&read_to_string(&config)?)?;
            let m = build_model(&cfg, seed)?;
            save_model(&m, &out)?;
            println!("{}", describe_written(&m, &out)?);
        }
        Command::Compress { input, steps, out } => {
            let mut m = load_model(&input)?;
            for raw in &steps {
                match parse_step(raw)? {
                    Step::DropPosConv => {
                        let (next, removed) = remove_positional_conv(&m);
                        if !removed {
                            eprintln!("warning: drop-pos-conv: model has no positional conv");
                        }
                        m = next;
                    }
                    Step::SelectLayers(layers) => m = select_layers(&m, &layers)?,
                    Step::Tie(group) => m = tie_weights(&m, group)?,
                    Step::Quantize => m = quantize_model(&m, QuantPolicy::default())?,
                }
            }
            save_model(&m, &out)?;
            println!("{}", describe_written(&m, &out)?);
        }
        Command::Analyze {
            input,
            clip_seconds,
            kv,
        } => {
            let m = load_model(&input)?;
            let report = analysis::analyze(&m, clip_seconds)?;
            if kv {
                print!("{}", report.render_kv());
            } else {
                print!("{}", report.render_table());
            }
        }
        Command::Infer {
            model,
            clip,
            emit_embedding,
        } => {
            let m = load_model(&model)?;
            let clip = load_clip_for(&m, &clip)?;
            let out = infer(&m, &clip)?;
            for (label, p) in ClassLabel::ALL.iter().zip(out.scores.probs()) {
                println!("{} {p:.6}", label.as_str());
            }
            match out.scores.label() {
                Some(label) => println!("label {}", label.as_str()),
                None => println!("label none"),
            }
            if emit_embedding {
                let joined: Vec<String> = out.embedding.iter().map(f32::to_string).collect();
                println!("embedding {}", joined.join(" "));
            }
        }
        Command::Bench { model, clip, reps } => {
            let m = load_model(&model)?;
            let clip = load_clip_for(&m, &clip)?;
            let r = bench_rtf(&m, &clip, reps)?;
            let mem = analysis::trace_memory(&m, &clip)?;
            println!("reps_timed {}", r.reps_timed);
            println!("mean_infer_s {:.6}", r.mean_infer_s);
            println!("rtf {:.6}", r.rtf);
            println!("peak_live_bytes {}", mem.peak_live_bytes);
            println!("weights_bytes {}", mem.weights_bytes);
        }
        Command::Roc {
            scores,
            positive,
            fpr,
        } => {
            let clips = parse_scores(&read_to_string(&scores)?)?;
            let positive = ClassLabel::parse(&positive)?;
            let tpr = tpr_at_fpr(&clips, positive, fpr)?;
            println!("positive {}", positive.as_str());
            println!("fpr_budget {fpr}");
            println!("tpr_at_fpr {tpr:.6}");
            for p in roc_curve(&clips, positive)? {
                println!("point {} {:.6} {:.6}", p.threshold, p.fpr, p.tpr);
            }
        }
        Command::Simulate { trace, model, seed } => {
            let t = parse_trace(&read_to_string(&trace)?)?;
            let m = load_model(&model)?;
            let log = simulate_meeting(&t, &m, seed)?;
            for r in &log.records {
                let label = match r.scores.label() {
                    Some(l) => l.as_str(),
                    None => "none",
                };
                println!("trigger {:.3} {:.3} {label}", r.onset_s, r.duration_s);
            }
            println!("total_audio_s {}", log.total_audio_s);
            println!("triggers {}", log.trigger_count());
            println!("naive_triggers {}", log.naive_triggers);
            if log.trigger_count() > 0 {
                let interval = trigger_interval(log.total_audio_s, log.trigger_count())?;
                println!("trigger_interval_s {interval:.4}");
            }
            match log.gating_ratio() {
                Some(r) => println!("gating_ratio {r:.4}"),
                None => println!("gating_ratio undefined"),
            }
        }
        Command::Energy { scenario } => {
            let s = match scenario {
                Some(path) => EnergyScenario::load(&path)?,
                None => EnergyScenario::default(),
            };
            let r = energy_reduction(
                s.naive_interval_s,
                s.trigger_interval_s,
                s.inference_seconds_old,
                s.inference_seconds_new,
            )?;
            let p = fleet_projection(&s)?;
            println!("gating_factor {:.4}", r.gating_factor);
            println!("speedup_factor {:.4}", r.speedup_factor);
            println!("combined_reduction {:.4}", r.combined);
            println!("per_user_kwh_old {:.6}", p.per_user_kwh_old);
            println!("per_user_kwh_new {:.6}", p.per_user_kwh_new);
            println!("fleet_gwh_old {:.4}", p.fleet_gwh_old);
            println!("fleet_gwh_new {:.4}", p.fleet_gwh_new);
            println!("savings_gwh {:.4}", p.savings_gwh);
            println!("people_equivalent {:.1}", p.people_equivalent);
        }
    }
    Ok(())
}

/// Full process entry: parse args, dispatch, map errors to one-line
/// `error: <kind>: <detail>` output and an exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {first}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
