//! Finite-difference check of the reference tiny model's gradients in f64.
//!
//! ```text
//! cargo run --release --example gradcheck -- 3
//! ```

use altfreeze::autodiff::{finite_difference_grad, max_relative_error, BnMode, ParamId, Reduction, Tape};
use altfreeze::model::{build_model, Model, ModelSpec};
use altfreeze::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> altfreeze::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut model: Model<f64> = build_model(&ModelSpec::reference_tiny([3, 4, 8, 8]), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = Tensor::new(vec![2, 3, 4, 8, 8], (0..1536).map(|_| rng.gen::<f64>()).collect())?;
    let labels = [0.0, 1.0];

    let loss = |m: &mut Model<f64>| -> altfreeze::Result<(Tape<f64>, _)> {
        let mut tape = Tape::new();
        let pass = m.forward_on_tape(&mut tape, &batch, BnMode::Train)?;
        let l = tape.bce_with_logits(pass.logits, &labels, Reduction::Mean)?;
        Ok((tape, l))
    };
    let (tape, l) = loss(&mut model)?;
    let grads = tape.backward(l)?;

    println!("{:<24} {:>6} {:>10}", "parameter", "numel", "rel err");
    for i in 0..model.params().len() {
        let original = model.params()[i].value.clone();
        let numeric = finite_difference_grad(
            |probe| {
                model.params_mut()[i].value = probe.clone();
                loss(&mut model).map(|(t, l)| t.value(l).item())
            },
            &original,
            1e-5,
        )?;
        model.params_mut()[i].value = original;
        let err = max_relative_error(&grads[&ParamId(i)], &numeric, 1e-6);
        let p = &model.params()[i];
        println!("{:<24} {:>6} {err:>10.2e}", p.name, p.value.numel());
    }
    Ok(())
}
