//! Overlap metrics and fold splitting.
//!
//! Scores are computed per image. A class that is absent from both the
//! prediction and the ground truth of an image is left out of that image's
//! mean; background counts as a class.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Per-class scores of one image; `None` marks a class absent from both maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: usize,
    pub pred: usize,
    pub gt: usize,
}

impl Overlap {
    pub fn union(&self) -> usize {
        self.pred + self.gt - self.intersection
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union() > 0).then(|| self.intersection as f64 / self.union() as f64)
    }

    pub fn dice(&self) -> Option<f64> {
        (self.pred + self.gt > 0).then(|| 2.0 * self.intersection as f64 / (self.pred + self.gt) as f64)
    }
}

pub fn overlaps(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<Vec<Overlap>> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "metrics",
            format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()),
        ));
    }
    let mut out = vec![Overlap::default(); num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        for c in [p, g] {
            if c as usize >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: c as usize,
                    num_classes,
                });
            }
        }
        out[p as usize].pred += 1;
        out[g as usize].gt += 1;
        if p == g {
            out[p as usize].intersection += 1;
        }
    }
    Ok(out)
}

fn scores(per_class: Vec<Option<f64>>) -> ClassScores {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    ClassScores { per_class, mean }
}

/// Intersection over union per class, `|P ∧ G| / |P ∨ G|`.
pub fn miou(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<ClassScores> {
    Ok(scores(overlaps(pred, gt, num_classes)?.iter().map(Overlap::iou).collect()))
}

/// Dice per class, `2 |P ∧ G| / (|P| + |G|)`.
pub fn dsc(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<ClassScores> {
    Ok(scores(overlaps(pred, gt, num_classes)?.iter().map(Overlap::dice).collect()))
}

/// Dataset-level scores: per-image means averaged over images, and per-class
/// means over the images where the class is present.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub per_class_dice: Vec<Option<f64>>,
    pub mean_dice: f64,
    pub samples: usize,
}

/// Accumulates per-image scores.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    num_classes: usize,
    iou_sum: Vec<f64>,
    dice_sum: Vec<f64>,
    present: Vec<usize>,
    image_iou: f64,
    image_dice: f64,
    samples: usize,
}

impl MetricsAccumulator {
    pub fn new(num_classes: usize) -> Self {
        MetricsAccumulator {
            num_classes,
            iou_sum: vec![0.0; num_classes],
            dice_sum: vec![0.0; num_classes],
            present: vec![0; num_classes],
            image_iou: 0.0,
            image_dice: 0.0,
            samples: 0,
        }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        let ov = overlaps(pred, gt, self.num_classes)?;
        let iou = scores(ov.iter().map(Overlap::iou).collect());
        let dice = scores(ov.iter().map(Overlap::dice).collect());
        for c in 0..self.num_classes {
            if let (Some(i), Some(d)) = (iou.per_class[c], dice.per_class[c]) {
                self.iou_sum[c] += i;
                self.dice_sum[c] += d;
                self.present[c] += 1;
            }
        }
        self.image_iou += iou.mean;
        self.image_dice += dice.mean;
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.samples == 0 {
            return Err(Error::invalid("no samples were evaluated"));
        }
        let per = |sums: &[f64]| -> Vec<Option<f64>> {
            sums.iter()
                .zip(&self.present)
                .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                .collect()
        };
        Ok(Metrics {
            per_class_iou: per(&self.iou_sum),
            mean_iou: self.image_iou / self.samples as f64,
            per_class_dice: per(&self.dice_sum),
            mean_dice: self.image_dice / self.samples as f64,
            samples: self.samples,
        })
    }
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(Error::invalid(format!("cannot split {n} samples into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Purpose::Folds));
    let (q, r) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = q + usize::from(f < r);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}
