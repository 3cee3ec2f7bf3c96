use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use altfreeze::augment::{clip_blend, random_mask_with, random_temporal_dropout, random_temporal_repeat};
use altfreeze::metrics::run_eval;
use altfreeze::model::{build_model, Model};
use altfreeze::partition::partition;
use altfreeze::persist::{
    config_lines, encode_pgm, initial_state, load_checkpoint, load_dataset, parse_config, quantize, save_checkpoint,
    save_dataset, write_file, RunConfig,
};
use altfreeze::synth::{
    build_spatial_set, build_temporal_set, build_training_set, build_validation_set, ClipDataset, ClipKind, ClipRecord,
};
use altfreeze::trainer::Trainer;
use altfreeze::{Error, Result};

/// Alternating spatial/temporal freezing for video forgery detectors.
#[derive(Parser)]
#[command(name = "altfreeze", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training, validation and probe datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes `model.ckpt` and `log.csv` into `--out`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many iterations are complete.
        #[arg(long)]
        iters: Option<u64>,
    },
    /// AUC of a checkpoint on stored datasets.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset names inside `--data`.
        #[arg(long, value_delimiter = ',', default_value = "temporal,spatial")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Per-clip score dump.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        clips_per_video: usize,
    },
    /// Print the spatial/temporal/shared parameter groups.
    Partition {
        #[arg(long, conflicts_with = "config")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Apply one fake-clip augmentation to a stored clip.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        op: AugOp,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Foreground clip index for `blend`; the clip itself when absent.
        #[arg(long)]
        with: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a class activation map as one PGM per frame.
    Cam {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Frames of the map to write; all when absent.
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AugOp {
    Tdrop,
    Trepeat,
    Blend,
}

const SETS: [&str; 4] = ["train", "val", "temporal", "spatial"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), parse_config)
}

fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let builders: [fn(&altfreeze::synth::DatasetSpec) -> Result<ClipDataset>; 4] =
        [build_training_set, build_validation_set, build_temporal_set, build_spatial_set];
    for (name, build) in SETS.iter().zip(builders) {
        let data = build(&cfg.data)?;
        save_dataset(&data, &out.join(format!("{name}.vclp")))?;
        write_file(&out.join(format!("{name}.tsv")), data.manifest_text().as_bytes())?;
        println!("{name}: {} clips ({} fake)", data.len(), data.count_label(1));
    }
    Ok(())
}

fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
    iters: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let train_set = load_dataset(&data.join("train.vclp"))?;
    let val = if cfg.train.eval_every > 0 {
        Some(load_dataset(&data.join("val.vclp"))?)
    } else {
        None
    };
    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.model.spec() != &cfg.model {
                return Err(Error::InvalidArgument("checkpoint model differs from the configured model".into()));
            }
            Trainer::resume(ck.model, cfg.train.clone(), ck.state)?
        }
        None => {
            let model: Model<f32> = build_model(&cfg.model, cfg.init_seed())?;
            let state = initial_state(&model, &cfg.train)?;
            Trainer::resume(model, cfg.train.clone(), state)?
        }
    };
    trainer.log_mut().header = config_lines(&cfg);
    trainer.run_until(&train_set, val.as_ref(), iters.unwrap_or(u64::MAX))?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    save_checkpoint(trainer.model(), trainer.state(), &out.join("model.ckpt"))?;
    let log_path = out.join("log.csv");
    let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    trainer.log().write_csv(file)?;
    let losses = trainer.log().losses();
    println!(
        "trained to iteration {} (final loss {:.4})",
        trainer.state().iteration,
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, sets: &[String], out: &Path, scores: Option<&Path>, k: usize) -> Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let loaded = sets
        .iter()
        .map(|s| load_dataset(&data.join(format!("{s}.vclp"))))
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<(&str, &ClipDataset)> = sets.iter().map(String::as_str).zip(&loaded).collect();
    let name = ckpt.file_stem().map_or("model".into(), |s| s.to_string_lossy().to_string());
    let report = run_eval(&ck.model, &named, k, &name, ck.state.seed)?;
    report.write_csv(fs::File::create(out).map_err(io_err(out))?)?;
    if let Some(path) = scores {
        report.write_scores_csv(fs::File::create(path).map_err(io_err(path))?)?;
    }
    for (d, a) in &report.aucs {
        println!("{d}: AUC {a:.4}");
    }
    Ok(())
}

fn show_partition(ckpt: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let model = match ckpt {
        Some(path) => load_checkpoint(path)?.model,
        None => {
            let cfg = load_config(config)?;
            build_model::<f32>(&cfg.model, cfg.init_seed())?
        }
    };
    print!("{}", partition(&model)?.report());
    Ok(())
}

fn augment(input: &Path, index: usize, op: AugOp, seed: u64, with: Option<usize>, out: &Path) -> Result<()> {
    let data = load_dataset(input)?;
    let get = |i: usize| {
        data.records
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range for {} clips", data.len())))
    };
    let clip = &get(index)?.clip;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kind, result) = match op {
        AugOp::Tdrop => (ClipKind::TemporalDropout, random_temporal_dropout(clip, &mut rng)?),
        AugOp::Trepeat => (ClipKind::TemporalRepeat, random_temporal_repeat(clip, &mut rng)?),
        AugOp::Blend => {
            let fg = &get(with.unwrap_or(index))?.clip;
            let mask = random_mask_with(clip.height(), clip.width(), &Default::default(), &mut rng)?;
            (ClipKind::Blend, clip_blend(fg, clip, &mask)?)
        }
    };
    let out_set = ClipDataset {
        records: vec![ClipRecord {
            id: 0,
            label: kind.label(),
            kind,
            clip: result,
        }],
        manifest: Vec::new(),
    };
    save_dataset(&out_set, out)
}

fn cam(ckpt: &Path, data: &Path, index: usize, frames: Option<&[usize]>, out: &Path) -> Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let set = load_dataset(data)?;
    let rec = set
        .records
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range for {} clips", set.len())))?;
    let map = ck.model.cam(rec.clip.tensor())?;
    let [t_n, h, w] = [map.shape()[0], map.shape()[1], map.shape()[2]];
    let all: Vec<usize> = (0..t_n).collect();
    fs::create_dir_all(out).map_err(io_err(out))?;
    for &t in frames.unwrap_or(&all) {
        if t >= t_n {
            return Err(Error::InvalidArgument(format!("frame {t} out of range for a {t_n}-frame map")));
        }
        let px = quantize(&map.data()[t * h * w..(t + 1) * h * w]);
        write_file(&out.join(format!("cam_{t:03}.pgm")), &encode_pgm(w, h, &px)?)?;
    }
    println!("label {} kind {}: wrote {} frames of {w}x{h}", rec.label, rec.kind, frames.map_or(t_n, <[usize]>::len));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => gen_data(config.as_deref(), &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
            iters,
        } => train(config.as_deref(), &data, &out, seed, resume.as_deref(), iters),
        Command::Eval {
            ckpt,
            data,
            sets,
            out,
            scores,
            clips_per_video,
        } => eval(&ckpt, &data, &sets, &out, scores.as_deref(), clips_per_video),
        Command::Partition { ckpt, config } => show_partition(ckpt.as_deref(), config.as_deref()),
        Command::Augment {
            input,
            index,
            op,
            seed,
            with,
            out,
        } => augment(&input, index, op, seed, with, &out),
        Command::Cam {
            ckpt,
            data,
            index,
            frames,
            out,
        } => cam(&ckpt, &data, index, frames.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
