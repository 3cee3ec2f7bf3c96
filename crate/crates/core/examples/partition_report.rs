//! Which parameters each phase of alternating training updates.

use altfreeze::model::{build_model, Model, ModelSpec, NamedParam, ParamKind};
use altfreeze::partition::{classify_param, partition};

fn main() -> altfreeze::Result<()> {
    let model: Model<f32> = build_model(&ModelSpec::reference_tiny([3, 8, 32, 32]), 0)?;
    print!("{}", partition(&model)?.report());

    println!("\nkernel shape rule:");
    for shape in [[16, 8, 3, 1, 1], [16, 8, 1, 3, 3], [16, 8, 1, 1, 1]] {
        let p = NamedParam {
            name: "probe.weight".into(),
            kind: ParamKind::ConvWeight,
            shape: shape.to_vec(),
        };
        println!("  {shape:?} -> {}", classify_param(&p)?);
    }
    let full = NamedParam {
        name: "full.weight".into(),
        kind: ParamKind::ConvWeight,
        shape: vec![16, 8, 3, 3, 3],
    };
    if let Err(e) = classify_param(&full) {
        println!("  [16, 8, 3, 3, 3] -> {e}");
    }
    Ok(())
}
