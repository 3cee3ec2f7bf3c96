//! Video-level AUC of a checkpoint on the two probe sets for several window counts.
//!
//! ```text
//! cargo run --release --example eval_probes -- /tmp/afrun/model.ckpt
//! ```

use altfreeze::metrics::run_eval;
use altfreeze::persist::load_checkpoint;
use altfreeze::synth::{build_spatial_set, build_temporal_set, DatasetSpec};

fn main() -> altfreeze::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: eval_probes <model.ckpt>");
        std::process::exit(2);
    };
    let ck = load_checkpoint(path.as_ref())?;
    let [c, t, h, w] = ck.model.spec().input_shape;
    // probe videos twice the model's clip length, so several windows fit
    let spec = DatasetSpec {
        clip_dims: [c, 2 * t, h, w],
        ..DatasetSpec::default()
    };
    let temporal = build_temporal_set(&spec)?;
    let spatial = build_spatial_set(&spec)?;
    println!("trained for {} iterations", ck.state.iteration);
    println!("windows  temporal  spatial");
    for k in [1, 2, 4, 8] {
        let r = run_eval(&ck.model, &[("temporal", &temporal), ("spatial", &spatial)], k, "", 0)?;
        println!("{k:>7}  {:.4}    {:.4}", r.aucs[0].1, r.aucs[1].1);
    }
    Ok(())
}
