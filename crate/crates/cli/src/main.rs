//! `dancegen`: ingest, train, generate, evaluate and render from the shell.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dancegen::audio::load_audio;
use dancegen::checkpoint::Checkpoint;
use dancegen::config::TrainConfig;
use dancegen::crossmodal::{EvalSetup, Evaluator};
use dancegen::dataset::{ingest_keypoint_dir, load_dataset, segment_pairs, write_pair, write_raw_fixture, SEGMENT_FRAMES};
use dancegen::perceptual::{accuracy, pretrain, PretrainConfig, StGcn};
use dancegen::render::{render_sequence, RenderSpec};
use dancegen::skeleton::{read_sequence, write_sequence, write_sequence_json, ImageSize};
use dancegen::synth::{fixture_set, style_labelled, NUM_STYLES};
use dancegen::training::{generate_from_checkpoint, generator_from_checkpoint, Trainer, TrainingPair};
use dancegen::{Error, Result};

#[derive(Parser)]
#[command(name = "dancegen", version, about = "Music-to-dance skeleton generation")]
struct Cli {
    /// Training configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Extra configuration entries, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic raw material: keypoint directories and audio files.
    Fixtures {
        #[arg(long, default_value_t = NUM_STYLES)]
        styles: usize,
        #[arg(long, default_value_t = 2)]
        per_style: usize,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
    },
    /// Pair a keypoint directory with its audio track in 5 s segments.
    Ingest {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Name prefix for the written pairs; defaults to the parent
        /// directory of the keypoints.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 1280)]
        width: u32,
        #[arg(long, default_value_t = 720)]
        height: u32,
    },
    /// Train on a paired dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Pretrained perceptual weights; pretrained on synthetic motion
        /// when absent.
        #[arg(long)]
        perceptual: Option<PathBuf>,
        /// Continue from `checkpoint.dgck` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate a dance for an audio file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Also write the JSON form of the sequence.
        #[arg(long)]
        json: bool,
    },
    /// Cross-modal evaluation against the random baselines.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Render a sequence to one PNG per frame.
    Render {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 640)]
        height: u32,
        #[arg(long, default_value_t = 3.0)]
        stroke: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => TrainConfig::from_text(
            &std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        )?,
        None => TrainConfig::default(),
    };
    for entry in &cli.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn seed(cli: &Cli) -> Result<u64> {
    Ok(match cli.seed {
        Some(s) => s,
        None if cli.config.is_some() || !cli.set.is_empty() => load_config(cli)?.seed,
        None => 0,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Fixtures {
            styles,
            per_style,
            seconds,
        } => {
            let frames = (seconds * 10.0).round() as usize;
            let pairs = fixture_set(*styles, *per_style, frames, seed(cli)?)?;
            for (i, pair) in pairs.iter().enumerate() {
                write_raw_fixture(&out.join(format!("video_{i:03}")), pair, ImageSize::default())?;
            }
            let labels: String = pairs
                .iter()
                .enumerate()
                .map(|(i, p)| format!("video_{i:03}\t{}\n", p.style))
                .collect();
            std::fs::write(out.join("styles.tsv"), labels)?;
            log::info!("wrote {} fixture videos to {}", pairs.len(), out.display());
        }
        Command::Ingest {
            keypoints,
            audio,
            name,
            width,
            height,
        } => {
            let size = ImageSize {
                width: *width,
                height: *height,
            };
            let pose = ingest_keypoint_dir(keypoints, size)?;
            let music = load_audio(audio)?;
            let segments = segment_pairs(&pose, &music)?;
            if segments.is_empty() {
                log::warn!(
                    "{} frames is shorter than one {SEGMENT_FRAMES}-frame segment; no pairs written",
                    pose.num_frames()
                );
            }
            let prefix = name.clone().unwrap_or_else(|| {
                let parent = keypoints.canonicalize().ok().and_then(|p| p.parent().map(stem));
                parent.unwrap_or_else(|| stem(keypoints))
            });
            for (k, (p, m)) in segments.iter().enumerate() {
                write_pair(out, &format!("{prefix}_{k:03}"), p, m)?;
            }
            log::info!("{}: {} pairs", prefix, segments.len());
        }
        Command::Train {
            data,
            perceptual,
            resume,
        } => {
            let config = load_config(cli)?;
            let pairs = load_dataset(data)?;
            let data: Vec<TrainingPair> = pairs.iter().map(|p| p.training_pair()).collect::<Result<_>>()?;
            std::fs::create_dir_all(out)?;
            let ckpt_path = out.join("checkpoint.dgck");
            let mut trainer = if *resume {
                let ckpt = Checkpoint::load(&ckpt_path)?;
                if ckpt.config_hash != config.hash() {
                    return Err(Error::Config("resumed checkpoint was trained with a different configuration".into()));
                }
                Trainer::from_checkpoint(&ckpt)?
            } else {
                let mut t = Trainer::new(config.clone())?;
                if config.condition.uses_perceptual() {
                    let phi = match perceptual {
                        Some(path) => StGcn::from_checkpoint(&Checkpoint::load(path)?)?,
                        None => pretrain_perceptual(&config, out)?,
                    };
                    t.set_perceptual(&phi)?;
                }
                t
            };
            let mut log = BufWriter::new(File::options().create(true).append(true).open(out.join("loss.tsv"))?);
            trainer.fit(&data, Some(out), &mut log)?;
            log.flush()?;
            log::info!("trained {} epochs, checkpoint at {}", trainer.epoch(), ckpt_path.display());
        }
        Command::Generate {
            checkpoint,
            audio,
            json,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let seq = generate_from_checkpoint(&ckpt, &load_audio(audio)?)?;
            std::fs::create_dir_all(out)?;
            let path = out.join(format!("{}.sksq", stem(audio)));
            write_sequence(&seq, &path)?;
            if *json {
                write_sequence_json(&seq, &path.with_extension("json"))?;
            }
            log::info!("{} frames written to {}", seq.num_frames(), path.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            trials,
        } => evaluate(cli, checkpoint, data, *trials)?,
        Command::Render {
            sequence,
            width,
            height,
            stroke,
        } => {
            let spec = RenderSpec {
                width: *width,
                height: *height,
                stroke: *stroke,
                ..RenderSpec::default()
            };
            let frames = render_sequence(&read_sequence(sequence)?, out, &spec)?;
            log::info!("rendered {} frames into {}", frames.len(), out.display());
        }
    }
    Ok(())
}

/// Pretrains the perceptual network on synthetic motion styles and saves it.
fn pretrain_perceptual(config: &TrainConfig, out: &Path) -> Result<StGcn> {
    let phi = StGcn::new(config.model().stgcn, config.seed ^ 0x5047)?;
    let styles = NUM_STYLES.min(config.pretrain_classes);
    let train = style_labelled(&fixture_set(styles, 4, 20, config.seed)?);
    let held_out = style_labelled(&fixture_set(styles, 2, 20, config.seed.wrapping_add(1))?);
    pretrain(
        &phi,
        &train,
        &PretrainConfig {
            steps: config.pretrain_steps,
            batch_size: 8,
            lr: config.lr_pretrain,
            seed: config.seed,
        },
    )?;
    log::info!("perceptual network held-out accuracy {:.3}", accuracy(&phi, &held_out)?);
    phi.to_checkpoint()?.save(&out.join("perceptual.dgck"))?;
    Ok(phi)
}

fn evaluate(cli: &Cli, checkpoint: &Path, data: &Path, trials: usize) -> Result<()> {
    let seed = seed(cli)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let generator = generator_from_checkpoint(&ckpt)?;
    let pairs = load_dataset(data)?;
    if pairs.len() < 2 {
        return Err(Error::DegenerateDataset("evaluation needs at least two pairs".into()));
    }
    // Stand-in for a genre corpus: the synthetic styles.
    let genre_set = fixture_set(NUM_STYLES, 4, 20, seed)?;
    let genre: Vec<_> = genre_set.iter().map(|p| (&p.music, p.style)).collect();
    let refs: Vec<_> = pairs.iter().map(|p| (&p.music, &p.pose)).collect();
    let setup = EvalSetup {
        clusters: NUM_STYLES.min(pairs.len()),
        trials,
        ..EvalSetup::desk(seed)
    };
    let evaluator = Evaluator::build(&refs, &genre, setup)?;
    let generated = pairs
        .iter()
        .map(|p| generator.generate(&p.training_pair()?.music))
        .collect::<Result<Vec<_>>>()?;
    let queries: Vec<_> = pairs.iter().zip(&generated).map(|(p, g)| (&p.music, g)).collect();
    let summary = evaluator.evaluate(&queries)?;
    std::fs::create_dir_all(cli.out.as_path())?;
    evaluator.dictionary.save(&cli.out.join("dictionary"))?;
    let mut tsv = String::from("query\tneighbour\tmodel\trand_frame\trand_seq\n");
    for (p, r) in pairs.iter().zip(&summary.queries) {
        tsv.push_str(&format!(
            "{}\t{}\t{:e}\t{:e}\t{:e}\n",
            p.name, pairs[r.neighbour].name, r.model, r.rand_frame, r.rand_seq
        ));
    }
    tsv.push_str(&format!(
        "mean\t-\t{:e}\t{:e}\t{:e}\n",
        summary.model, summary.rand_frame, summary.rand_seq
    ));
    std::fs::write(cli.out.join("scores.tsv"), tsv)?;
    println!(
        "model {:.4}\trand_frame {:.4}\trand_seq {:.4}\tordering {}",
        summary.model,
        summary.rand_frame,
        summary.rand_seq,
        if summary.ordering_holds() { "holds" } else { "violated" }
    );
    Ok(())
}
