//! Class activation map of a blend fake next to its planted mask.
//!
//! Trains a short run on blend fakes (or loads `--ckpt`), then draws both maps
//! in ASCII at the feature-map resolution. `--out` also writes one PGM per frame.
//!
//! ```text
//! cargo run --release --example cam_heatmap -- --out /tmp/afcam
//! ```

use std::path::PathBuf;

use clap::Parser;

use altfreeze::model::{build_model, Model, ModelSpec};
use altfreeze::persist::{encode_pgm, load_checkpoint, quantize, write_file};
use altfreeze::synth::{blend_parts, build_spatial_set, build_training_set, DatasetSpec, Split};
use altfreeze::trainer::{TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Which spatial-probe fake to show.
    #[arg(long, default_value_t = 0)]
    fake: usize,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

const SHADES: &[u8] = b" .:-=+*#%@";

fn shade(v: f64) -> char {
    SHADES[((v.clamp(0.0, 1.0) * (SHADES.len() - 1) as f64).round()) as usize] as char
}

fn main() -> altfreeze::Result<()> {
    let args = Args::parse();
    let spec = DatasetSpec {
        mix: [0.0, 0.0, 1.0],
        ..DatasetSpec::default()
    };
    let model: Model<f32> = match &args.ckpt {
        Some(path) => load_checkpoint(path)?.model,
        None => {
            let config = TrainConfig {
                epochs: args.epochs,
                fake_aug: false,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(build_model(&ModelSpec::reference_tiny(spec.clip_dims), 0)?, config)?;
            trainer.run(&build_training_set(&spec)?, None)?;
            trainer.into_parts().0
        }
    };

    let probe = build_spatial_set(&spec)?;
    let idx = spec.probe_real + args.fake;
    let (rec, entry) = (&probe.records[idx], &probe.manifest[idx]);
    let parts = blend_parts(entry.seed, spec.clip_dims, Split::SpatialProbe, &spec, &spec.probe_mask)?;
    let cam = model.cam(rec.clip.tensor())?;
    let [t_n, h, w] = [cam.shape()[0], cam.shape()[1], cam.shape()[2]];
    let f = spec.clip_dims[2] / h;

    // time-averaged CAM beside the block-averaged mask
    println!("{:<w$}   mask", "cam", w = w);
    for y in 0..h {
        let mut left = String::new();
        let mut right = String::new();
        for x in 0..w {
            let v = (0..t_n).map(|t| cam.data()[(t * h + y) * w + x] as f64).sum::<f64>() / t_n as f64;
            left.push(shade(v));
            let mut m = 0.0;
            for yy in y * f..(y + 1) * f {
                for xx in x * f..(x + 1) * f {
                    m += parts.mask.data()[yy * spec.clip_dims[3] + xx] as f64;
                }
            }
            right.push(shade(m / (f * f) as f64));
        }
        println!("{left}   {right}");
    }

    if let Some(out) = args.out {
        std::fs::create_dir_all(&out).map_err(|e| altfreeze::Error::Io { path: out.clone(), source: e })?;
        for t in 0..t_n {
            let px = quantize(&cam.data()[t * h * w..(t + 1) * h * w]);
            write_file(&out.join(format!("cam_{t:03}.pgm")), &encode_pgm(w, h, &px)?)?;
        }
        println!("wrote {t_n} frames to {}", out.display());
    }
    Ok(())
}
