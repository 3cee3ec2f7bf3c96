//! Naive joint training versus alternating freezing, scored on the two probe sets.
//!
//! ```text
//! cargo run --release --example ablation -- --seeds 3 --epochs 30
//! ```

use std::time::Instant;

use altfreeze::metrics::run_eval;
use altfreeze::model::{build_model, ModelSpec};
use altfreeze::synth::{build_spatial_set, build_temporal_set, build_training_set, DatasetSpec};
use altfreeze::trainer::{TrainConfig, Trainer};
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 160)]
    train_real: usize,
    #[arg(long, default_value_t = 160)]
    train_fake: usize,
    #[arg(long, default_value_t = 64)]
    probe: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Disable online fake generation during training.
    #[arg(long)]
    no_fake_aug: bool,
    /// Freeze ratio I_s:I_t for the alternating run.
    #[arg(long, default_value = "20:1")]
    ratio: String,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

fn main() -> altfreeze::Result<()> {
    let args = Args::parse();
    let (i_s, i_t) = args
        .ratio
        .split_once(':')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .expect("ratio looks like 20:1");
    let spec = DatasetSpec {
        train_real: args.train_real,
        train_fake: args.train_fake,
        probe_real: args.probe,
        probe_fake: args.probe,
        seed: args.data_seed,
        ..DatasetSpec::default()
    };
    let train = build_training_set(&spec)?;
    let temporal = build_temporal_set(&spec)?;
    let spatial = build_spatial_set(&spec)?;
    let mspec = ModelSpec::reference_tiny([3, 8, 32, 32]);

    println!("mode      seed  train   temporal  spatial   secs");
    for naive in [true, false] {
        let mut sum = 0.0;
        for seed in 0..args.seeds {
            let start = Instant::now();
            let config = TrainConfig {
                epochs: args.epochs,
                lr: args.lr,
                batch_size: args.batch,
                naive,
                i_s,
                i_t,
                seed,
                fake_aug: !args.no_fake_aug,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(build_model(&mspec, seed)?, config)?;
            trainer.run(&train, None)?;
            let report = run_eval(
                trainer.model(),
                &[("train", &train), ("temporal", &temporal), ("spatial", &spatial)],
                8,
                "",
                seed,
            )?;
            let [tr, te, sp] = [0, 1, 2].map(|i| report.aucs[i].1);
            sum += (te + sp) / 2.0;
            println!(
                "{:<8}  {seed:>4}  {tr:.4}  {te:.4}    {sp:.4}    {:.1}",
                if naive { "naive" } else { "altfreeze" },
                start.elapsed().as_secs_f64()
            );
        }
        println!("mean probe AUC: {:.4}", sum / args.seeds as f64);
    }
    Ok(())
}
