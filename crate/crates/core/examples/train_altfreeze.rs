//! Trains the reference tiny model with alternating freezing, tracking
//! validation AUC, and saves a checkpoint plus the CSV log.
//!
//! ```text
//! cargo run --release --example train_altfreeze -- --epochs 10 --out /tmp/afrun
//! ```

use std::fs::File;
use std::path::PathBuf;

use clap::Parser;

use altfreeze::metrics::run_eval;
use altfreeze::model::{build_model, ModelSpec};
use altfreeze::partition::ParamGroup;
use altfreeze::persist::save_checkpoint;
use altfreeze::synth::{build_spatial_set, build_temporal_set, build_training_set, build_validation_set, DatasetSpec};
use altfreeze::trainer::{LogRow, TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    i_s: u64,
    #[arg(long, default_value_t = 1)]
    i_t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> altfreeze::Result<()> {
    let args = Args::parse();
    let spec = DatasetSpec::default();
    let train = build_training_set(&spec)?;
    let val = build_validation_set(&spec)?;
    let config = TrainConfig {
        epochs: args.epochs,
        i_s: args.i_s,
        i_t: args.i_t,
        seed: args.seed,
        eval_every: 1,
        ..TrainConfig::default()
    };
    let model = build_model(&ModelSpec::reference_tiny(spec.clip_dims), args.seed)?;
    let mut trainer = Trainer::new(model, config)?;
    println!(
        "{} spatial / {} temporal / {} shared tensors, {} iterations",
        trainer.members(ParamGroup::Spatial).len(),
        trainer.members(ParamGroup::Temporal).len(),
        trainer.members(ParamGroup::Shared).len(),
        trainer.config().total_iters(train.len())
    );
    trainer.run(&train, Some(&val))?;

    let mut losses = Vec::new();
    for row in &trainer.log().rows {
        match *row {
            LogRow::Step { loss, .. } => losses.push(loss),
            LogRow::Eval { epoch, auc, .. } => {
                let mean = losses.iter().sum::<f64>() / losses.len() as f64;
                println!("epoch {epoch:>3}  loss {mean:.4}  val AUC {auc:.4}");
                losses.clear();
            }
        }
    }

    let temporal = build_temporal_set(&spec)?;
    let spatial = build_spatial_set(&spec)?;
    let report = run_eval(trainer.model(), &[("temporal", &temporal), ("spatial", &spatial)], 8, "altfreeze", args.seed)?;
    for (d, a) in &report.aucs {
        println!("{d:<9} AUC {a:.4}");
    }

    if let Some(out) = args.out {
        std::fs::create_dir_all(&out).map_err(|e| altfreeze::Error::Io { path: out.clone(), source: e })?;
        save_checkpoint(trainer.model(), trainer.state(), &out.join("model.ckpt"))?;
        let log_path = out.join("log.csv");
        let file = File::create(&log_path).map_err(|e| altfreeze::Error::Io { path: log_path, source: e })?;
        trainer.log().write_csv(file)?;
        println!("saved to {}", out.display());
    }
    Ok(())
}
