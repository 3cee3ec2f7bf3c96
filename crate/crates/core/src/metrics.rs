//! Video-level scoring and ROC AUC.

use std::io::Write;

use crate::augment::Clip;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::synth::{ClipDataset, ClipKind};
use crate::tensor::Tensor;

/// Windows scored per video when none is given.
pub const DEFAULT_CLIPS_PER_VIDEO: usize = 8;

/// Area under the ROC curve via the Mann–Whitney statistic with midranks for
/// ties: the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Start frames of up to `k` uniformly spaced windows among `available`.
pub fn window_starts(available: usize, k: usize) -> Vec<usize> {
    if k >= available {
        return (0..available).collect();
    }
    (0..k)
        .map(|i| (((i as f64 + 0.5) * available as f64 / k as f64) - 0.5).round() as usize)
        .collect()
}

/// Mean fake probability over `k` uniformly spaced windows of the model's clip
/// length. Videos shorter than one window are an error.
pub fn video_score(model: &Model<f32>, video: &Clip, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("clips per video must be at least 1"));
    }
    let len = model.spec().input_shape[1];
    if video.frames() < len {
        return Err(Error::invalid(format!(
            "video has {} frames, fewer than one {len}-frame window",
            video.frames()
        )));
    }
    let windows = window_starts(video.frames() - len + 1, k)
        .into_iter()
        .map(|s| video.window(s, len).map(Clip::into_tensor))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<f32>> = windows.iter().collect();
    let probs = model.predict(&Tensor::stack(&refs)?)?;
    Ok(probs.data().iter().map(|&p| p as f64).sum::<f64>() / probs.numel() as f64)
}

/// Scores every clip of a dataset, batching whole-window videos for speed.
pub fn score_dataset(model: &Model<f32>, data: &ClipDataset, k: usize) -> Result<Vec<f64>> {
    let len = model.spec().input_shape[1];
    let mut scores = vec![0.0; data.len()];
    let single: Vec<usize> = (0..data.len()).filter(|&i| data.records[i].clip.frames() == len).collect();
    for chunk in single.chunks(16) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| data.records[i].clip.tensor()).collect();
        let probs = model.predict(&Tensor::stack(&refs)?)?;
        for (&i, &p) in chunk.iter().zip(probs.data()) {
            scores[i] = p as f64;
        }
    }
    for (i, r) in data.records.iter().enumerate() {
        if r.clip.frames() != len {
            scores[i] = video_score(model, &r.clip, k)?;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub dataset: String,
    pub id: u32,
    pub label: u8,
    pub kind: ClipKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Name of the evaluated model, e.g. the checkpoint file stem.
    pub name: String,
    pub clips_per_video: usize,
    pub seed: u64,
    pub aucs: Vec<(String, f64)>,
    pub scores: Vec<ClipScore>,
}

impl EvalReport {
    pub fn auc_of(&self, dataset: &str) -> Option<f64> {
        self.aucs.iter().find(|(d, _)| d == dataset).map(|&(_, a)| a)
    }

    /// `dataset,name,auc` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "name", "auc"])?;
        for (d, a) in &self.aucs {
            w.write_record([d.as_str(), self.name.as_str(), &format!("{a:.6}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Per-clip `dataset,id,label,kind,score` rows.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "id", "label", "kind", "score"])?;
        for s in &self.scores {
            w.write_record([
                s.dataset.clone(),
                s.id.to_string(),
                s.label.to_string(),
                s.kind.to_string(),
                format!("{:.9}", s.score),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// AUC of `model` on each named dataset. BN runs on running statistics.
pub fn run_eval(
    model: &Model<f32>,
    datasets: &[(&str, &ClipDataset)],
    clips_per_video: usize,
    name: &str,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        name: name.to_string(),
        clips_per_video,
        seed,
        aucs: Vec::new(),
        scores: Vec::new(),
    };
    for &(dname, data) in datasets {
        let scores = score_dataset(model, data, clips_per_video)?;
        let labels: Vec<u8> = data.records.iter().map(|r| r.label).collect();
        let a = auc(&scores, &labels).map_err(|e| Error::invalid(format!("dataset `{dname}`: {e}")))?;
        report.aucs.push((dname.to_string(), a));
        report
            .scores
            .extend(data.records.iter().zip(&scores).map(|(r, &score)| ClipScore {
                dataset: dname.to_string(),
                id: r.id,
                label: r.label,
                kind: r.kind,
                score,
            }));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    hits += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn hand_case() {
        assert_eq!(auc(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_and_bad_labels_error() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1, 0.2], &[0, 2]).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn window_spacing() {
        assert_eq!(window_starts(1, 8), vec![0]);
        assert_eq!(window_starts(5, 8), vec![0, 1, 2, 3, 4]);
        assert_eq!(window_starts(9, 1), vec![4]);
        let s = window_starts(17, 8);
        assert_eq!(s.len(), 8);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(*s.last().unwrap() < 17);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..20).prop_map(|v| v as f64 / 4.0), n),
                proptest::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_pair_count((scores, mut labels) in instance()) {
            labels[0] = 0;
            labels[1] = 1;
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - brute_force(&scores, &labels)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn monotone_transform_invariant((scores, mut labels) in instance()) {
            labels[0] = 0;
            labels[1] = 1;
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
        }

        #[test]
        fn label_flip_complements(
            ranks in (2usize..100).prop_flat_map(|n| Just((0..n).collect::<Vec<usize>>()).prop_shuffle()),
            seed in any::<u64>(),
        ) {
            // distinct scores, so there are no ties
            let scores: Vec<f64> = ranks.iter().map(|&r| r as f64 * 0.37).collect();
            let mut labels: Vec<u8> = (0..scores.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let sum = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
