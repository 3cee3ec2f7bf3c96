use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use altfreeze::augment::{clip_blend, random_mask, Clip};
use altfreeze::persist::{decode_dataset, encode_dataset, parse_manifest};
use altfreeze::synth::{
    build_spatial_set, build_temporal_set, build_training_set, build_validation_set, gen_real_clip, ClipKind,
    DatasetSpec, Split,
};

fn spec(fakes: usize) -> DatasetSpec {
    DatasetSpec {
        train_real: 10,
        train_fake: fakes,
        val_real: 6,
        val_fake: 6,
        probe_real: 8,
        probe_fake: 8,
        clip_dims: [3, 4, 16, 16],
        ..DatasetSpec::default()
    }
}

#[test]
fn kind_histogram_follows_the_mix() {
    let n = 300;
    let data = build_training_set(&spec(n)).unwrap();
    let hist = data.kind_histogram();
    // each kind is Binomial(300, 1/3): mean 100, sd about 8.2
    for kind in [ClipKind::TemporalDropout, ClipKind::TemporalRepeat, ClipKind::Blend] {
        let c = hist.get(&kind).copied().unwrap_or(0) as f64;
        assert!((c - 100.0).abs() < 4.0 * (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt(), "{kind}: {c}");
    }
    assert_eq!(hist[&ClipKind::Real], 10);

    let skewed = build_training_set(&DatasetSpec {
        mix: [2.0, 1.0, 0.0],
        ..spec(120)
    })
    .unwrap()
    .kind_histogram();
    assert!(!skewed.contains_key(&ClipKind::Blend));
    assert!(skewed[&ClipKind::TemporalDropout] > skewed[&ClipKind::TemporalRepeat]);
}

#[test]
fn splits_use_disjoint_source_videos() {
    let s = spec(30);
    let sets = [
        (Split::Train, build_training_set(&s).unwrap()),
        (Split::Val, build_validation_set(&s).unwrap()),
        (Split::TemporalProbe, build_temporal_set(&s).unwrap()),
        (Split::SpatialProbe, build_spatial_set(&s).unwrap()),
    ];
    let mut seen = HashSet::new();
    for (split, data) in &sets {
        for e in &data.manifest {
            assert_eq!(Split::of_seed(e.seed), Some(*split));
            assert!(seen.insert(e.seed), "seed {} reused", e.seed);
            if let Some(fg) = e.detail.split(',').find_map(|f| f.strip_prefix("fg=")) {
                if let Ok(other) = fg.parse::<u64>() {
                    assert_eq!(Split::of_seed(other), Some(*split), "foreground {other} crosses splits");
                }
            }
        }
    }
    let (a, b) = (s.train_mask.blur_sigma, s.probe_mask.blur_sigma);
    assert!(a.1 <= b.0, "blur ranges {a:?} and {b:?} overlap");
}

#[test]
fn datasets_round_trip_and_manifests_parse() {
    let data = build_training_set(&spec(12)).unwrap();
    let bytes = encode_dataset(&data).unwrap();
    let back = decode_dataset(&bytes).unwrap();
    assert_eq!(encode_dataset(&back).unwrap(), bytes);
    assert_eq!(parse_manifest(&data.manifest_text()).unwrap(), data.manifest);
    for r in &data.records {
        assert_eq!(r.label, r.kind.label());
    }
}

#[test]
fn decode_rejects_damaged_files() {
    let data = build_temporal_set(&spec(4)).unwrap();
    let bytes = encode_dataset(&data).unwrap();
    let err = decode_dataset(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
    assert!(err.contains("truncated") && err.contains("offset"), "{err}");
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(decode_dataset(&bad_magic).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(decode_dataset(&extra).is_err());
}

#[test]
fn mask_override_turns_spatial_fakes_into_their_foreground() {
    let s = DatasetSpec {
        mask_override: Some(0.0),
        ..spec(4)
    };
    let data = build_spatial_set(&s).unwrap();
    for (r, e) in data.records.iter().zip(&data.manifest) {
        // with M = 0 every fake is its own background video
        assert_eq!(r.clip, gen_real_clip(e.seed, s.clip_dims));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blend_stays_in_the_source_hull(a in 0u64..1000, b in 0u64..1000, m in any::<u64>()) {
        let dims = [2, 3, 12, 12];
        let (fg, bg) = (gen_real_clip(a, dims), gen_real_clip(b, dims));
        let mask = random_mask(12, 12, &mut ChaCha8Rng::seed_from_u64(m)).unwrap();
        let out = clip_blend(&fg, &bg, &mask).unwrap();
        for ((o, f), g) in out.tensor().data().iter().zip(fg.tensor().data()).zip(bg.tensor().data()) {
            prop_assert!(*o >= f.min(*g) - 1e-6 && *o <= f.max(*g) + 1e-6);
        }
    }

    #[test]
    fn real_clips_are_smooth_in_time(seed in any::<u64>()) {
        let clip: Clip = gen_real_clip(seed, [3, 6, 16, 16]);
        prop_assert!(clip.max_frame_difference() < altfreeze::synth::MAX_REAL_FRAME_DIFF);
        prop_assert!(clip.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
