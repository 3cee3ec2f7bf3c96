//! Renders the training, validation and probe datasets and writes them to disk.
//!
//! ```text
//! cargo run --example gen_data -- /tmp/afdata
//! ```

use std::path::PathBuf;

use altfreeze::persist::{save_dataset, write_file};
use altfreeze::synth::{
    build_spatial_set, build_temporal_set, build_training_set, build_validation_set, ClipDataset, DatasetSpec,
};

fn main() -> altfreeze::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("altfreeze-data"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| altfreeze::Error::Io { path: out.clone(), source: e })?;
    let spec = DatasetSpec::default();
    let sets: [(&str, ClipDataset); 4] = [
        ("train", build_training_set(&spec)?),
        ("val", build_validation_set(&spec)?),
        ("temporal", build_temporal_set(&spec)?),
        ("spatial", build_spatial_set(&spec)?),
    ];
    for (name, data) in &sets {
        save_dataset(data, &out.join(format!("{name}.vclp")))?;
        write_file(&out.join(format!("{name}.tsv")), data.manifest_text().as_bytes())?;
        let kinds: Vec<String> = data.kind_histogram().iter().map(|(k, n)| format!("{k}={n}")).collect();
        println!("{name:<9} {:>4} clips  {}", data.len(), kinds.join(" "));
    }
    println!("written to {}", out.display());
    Ok(())
}
