//! Probe AUC under blur, block distortion and contrast change at each severity.
//!
//! Uses `--ckpt` when given, otherwise trains a short run first.
//!
//! ```text
//! cargo run --release --example perturbations -- --ckpt /tmp/afrun/model.ckpt
//! ```

use std::path::PathBuf;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use altfreeze::augment::{perturb, PerturbKind, MAX_PERTURB_LEVEL};
use altfreeze::metrics::run_eval;
use altfreeze::model::{build_model, Model, ModelSpec};
use altfreeze::persist::load_checkpoint;
use altfreeze::synth::{build_spatial_set, build_temporal_set, build_training_set, ClipDataset, DatasetSpec};
use altfreeze::trainer::{TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
}

fn perturbed(data: &ClipDataset, kind: PerturbKind, level: usize) -> altfreeze::Result<ClipDataset> {
    let mut out = data.clone();
    for r in &mut out.records {
        let mut rng = ChaCha8Rng::seed_from_u64(r.id as u64);
        r.clip = perturb(&r.clip, kind, level, &mut rng)?;
    }
    Ok(out)
}

fn main() -> altfreeze::Result<()> {
    let args = Args::parse();
    let spec = DatasetSpec::default();
    let model: Model<f32> = match &args.ckpt {
        Some(p) => load_checkpoint(p)?.model,
        None => {
            let config = TrainConfig {
                epochs: args.epochs,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(build_model(&ModelSpec::reference_tiny(spec.clip_dims), 0)?, config)?;
            trainer.run(&build_training_set(&spec)?, None)?;
            trainer.into_parts().0
        }
    };
    let temporal = build_temporal_set(&spec)?;
    let spatial = build_spatial_set(&spec)?;

    println!("{:<9} {:>5}  temporal  spatial", "kind", "level");
    for kind in PerturbKind::ALL {
        for level in 0..=MAX_PERTURB_LEVEL {
            let (t, s) = (perturbed(&temporal, kind, level)?, perturbed(&spatial, kind, level)?);
            let r = run_eval(&model, &[("temporal", &t), ("spatial", &s)], 8, "", 0)?;
            println!("{kind:<9} {level:>5}  {:.4}    {:.4}", r.aucs[0].1, r.aucs[1].1);
        }
    }
    Ok(())
}
