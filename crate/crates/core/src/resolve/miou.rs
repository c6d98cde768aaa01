//! Integer confusion accounting and exact mIoU.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabelRaster, PosteriorDump};
use crate::taxonomy::VOID;

use super::relations::{ConcatSpace, RelationSet, ScoreIndex, Scorer};

/// Per-class true positives and ground-truth / prediction totals. Pixels
/// with void ground truth are skipped; void predictions count as misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub tp: Vec<u64>,
    pub gt: Vec<u64>,
    pub pred: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            gt: vec![0; classes],
            pred: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    #[inline]
    pub fn add(&mut self, gt: u16, pred: u16) {
        if gt == VOID {
            return;
        }
        self.gt[gt as usize] += 1;
        if pred != VOID {
            self.pred[pred as usize] += 1;
            if pred == gt {
                self.tp[gt as usize] += 1;
            }
        }
    }

    pub fn accumulate(&mut self, gt: &[u16], pred: &[u16]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ground-truth pixels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        let n = self.classes();
        for (i, (&g, &p)) in gt.iter().zip(pred).enumerate() {
            for l in [g, p] {
                if l != VOID && l as usize >= n {
                    return Err(Error::OutOfRangeLabel {
                        label: l as u32,
                        pixel: i,
                        classes: n,
                    });
                }
            }
            self.add(g, p);
        }
        Ok(())
    }

    pub fn merge(mut self, other: &Confusion) -> Self {
        for (dst, src) in [(&mut self.tp, &other.tp), (&mut self.gt, &other.gt), (&mut self.pred, &other.pred)] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self
    }

    pub fn intersection(&self, c: usize) -> u64 {
        self.tp[c]
    }

    pub fn union(&self, c: usize) -> u64 {
        self.gt[c] + self.pred[c] - self.tp[c]
    }

    pub fn report(&self) -> MiouReport {
        let n = self.classes();
        let intersections: Vec<u64> = (0..n).map(|c| self.intersection(c)).collect();
        let unions: Vec<u64> = (0..n).map(|c| self.union(c)).collect();
        let mut sum = BigRational::zero();
        let mut present = 0u64;
        let per_class = intersections
            .iter()
            .zip(&unions)
            .map(|(&i, &u)| {
                (u > 0).then(|| {
                    sum += BigRational::new(BigInt::from(i), BigInt::from(u));
                    present += 1;
                    i as f64 / u as f64
                })
            })
            .collect();
        let miou = if present == 0 {
            0.0
        } else {
            (sum / BigInt::from(present)).to_f64().unwrap_or(0.0)
        };
        MiouReport {
            miou,
            per_class,
            intersections,
            unions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// Mean over classes with a non-empty union, rounded once from the
    /// exact rational mean.
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub intersections: Vec<u64>,
    pub unions: Vec<u64>,
}

/// mIoU of a hard prediction raster against ground truth.
pub fn miou_of_labels(gt: &LabelRaster, pred: &LabelRaster, classes: usize) -> Result<MiouReport> {
    if !gt.same_shape(pred) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} ground truth vs {}x{} prediction",
            gt.width, gt.height, pred.width, pred.height
        )));
    }
    let mut c = Confusion::new(classes);
    c.accumulate(&gt.labels, &pred.labels)?;
    Ok(c.report())
}

/// One image: ground truth of one dataset and the concatenation model's
/// posterior on it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub gt: LabelRaster,
    pub posterior: PosteriorDump,
}

impl EvalRecord {
    pub fn check(&self, space: &ConcatSpace, dataset: &str) -> Result<()> {
        let side = space.side(dataset).ok_or_else(|| Error::TaxonomyMismatch {
            expected: space.id(),
            found: dataset.to_owned(),
        })?;
        self.gt.check(space.taxonomy(side))?;
        if self.posterior.taxonomy_id != space.id() {
            return Err(Error::TaxonomyMismatch {
                expected: space.id(),
                found: self.posterior.taxonomy_id.clone(),
            });
        }
        if self.gt.width != self.posterior.width || self.gt.height != self.posterior.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} ground truth vs {}x{} posterior",
                self.gt.width, self.gt.height, self.posterior.width, self.posterior.height
            )));
        }
        let n = space.len();
        for i in 0..self.posterior.num_pixels() {
            if let Some(e) = self.posterior.active(i).find(|e| e.class as usize >= n) {
                return Err(Error::OutOfRangeLabel {
                    label: e.class as u32,
                    pixel: i,
                    classes: n,
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel predictions of one record under relation-aware scoring.
pub fn predict_record(record: &EvalRecord, index: &ScoreIndex) -> Vec<u16> {
    let mut scorer = Scorer::new(index);
    (0..record.posterior.num_pixels())
        .map(|i| scorer.predict(record.posterior.pixel(i)) as u16)
        .collect()
}

/// mIoU of the concatenation model on `dataset` after post-inference
/// mapping with `relations`.
pub fn evaluate_miou(
    records: &[EvalRecord],
    space: &ConcatSpace,
    dataset: &str,
    relations: &RelationSet,
) -> Result<MiouReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords(dataset.to_owned()));
    }
    for r in records {
        r.check(space, dataset)?;
    }
    evaluate_checked(records, space, dataset, relations)
}

/// [`evaluate_miou`] for records already checked against `space`.
pub(crate) fn evaluate_checked(
    records: &[EvalRecord],
    space: &ConcatSpace,
    dataset: &str,
    relations: &RelationSet,
) -> Result<MiouReport> {
    let index = ScoreIndex::new(space, dataset, relations)?;
    let classes = index.classes();
    let confusion = records
        .par_iter()
        .fold(
            || Confusion::new(classes),
            |mut acc, r| {
                let mut scorer = Scorer::new(&index);
                for (i, &g) in r.gt.labels.iter().enumerate() {
                    if g != VOID {
                        let p = scorer.predict(r.posterior.pixel(i)) as u16;
                        acc.add(g, p);
                    }
                }
                acc
            },
        )
        .reduce(|| Confusion::new(classes), |a, b| a.merge(&b));
    Ok(confusion.report())
}
