//! The three fake-clip generators applied to one rendered clip.
//!
//! For every output frame, prints which source frame it equals (or `0` for a
//! zero frame, `~` for a blended frame) and the mean absolute change from the
//! previous frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use altfreeze::augment::{clip_blend, random_mask, temporal_dropout, temporal_repeat, translate, Clip};
use altfreeze::synth::gen_real_clip;

fn describe(name: &str, fake: &Clip, source: &Clip) {
    let frames: Vec<Vec<f32>> = (0..source.frames()).map(|t| source.frame(t)).collect();
    let origin: Vec<String> = (0..fake.frames())
        .map(|t| {
            let f = fake.frame(t);
            if fake.is_zero_frame(t) {
                "0".into()
            } else {
                frames.iter().position(|s| *s == f).map_or("~".into(), |i| i.to_string())
            }
        })
        .collect();
    let diffs: Vec<String> = (0..fake.frames() - 1).map(|t| format!("{:.3}", fake.frame_difference(t))).collect();
    println!("{name:<8} frames [{}]  |dt| [{}]", origin.join(" "), diffs.join(" "));
}

fn main() -> altfreeze::Result<()> {
    let dims = [3, 8, 32, 32];
    let real = gen_real_clip(7, dims);
    describe("real", &real, &real);
    describe("dropout", &temporal_dropout(&real, &[2, 5])?, &real);
    describe("repeat", &temporal_repeat(&real, &[1, 4])?, &real);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = random_mask(dims[2], dims[3], &mut rng)?;
    let other = gen_real_clip(8, dims);
    describe("blend", &clip_blend(&other, &real, &mask)?, &real);
    describe("self", &clip_blend(&translate(&real, 6, -4), &real, &mask)?, &real);
    println!("mask covers {:.1}% of the frame", 100.0 * mask.coverage());
    Ok(())
}
