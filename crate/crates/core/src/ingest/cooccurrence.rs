use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::raster::LabelRaster;
use crate::taxonomy::{Taxonomy, VOID};

/// Separator between row and column taxonomy ids in the CSV corner cell.
const CORNER_SEP: char = '\\';

/// Pixel counts pairing classes of a row taxonomy (ground truth or
/// intra-domain predictions) with predictions over a column taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    pub row_taxonomy_id: String,
    pub col_taxonomy_id: String,
    pub row_classes: Vec<String>,
    pub col_classes: Vec<String>,
    counts: Vec<u64>,
    pixel_total: u64,
}

impl CooccurrenceMatrix {
    pub fn new(rows: &Taxonomy, cols: &Taxonomy) -> Result<Self> {
        Self::from_counts(
            rows.dataset_id.clone(),
            cols.dataset_id.clone(),
            rows.classes.clone(),
            cols.classes.clone(),
            vec![0; rows.len() * cols.len()],
        )
    }

    pub fn from_counts(
        row_taxonomy_id: String,
        col_taxonomy_id: String,
        row_classes: Vec<String>,
        col_classes: Vec<String>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if row_taxonomy_id == col_taxonomy_id {
            return Err(Error::TaxonomyMismatch {
                expected: format!("a taxonomy other than `{row_taxonomy_id}`"),
                found: col_taxonomy_id,
            });
        }
        if counts.len() != row_classes.len() * col_classes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} counts, got {}",
                row_classes.len(),
                col_classes.len(),
                row_classes.len() * col_classes.len(),
                counts.len()
            )));
        }
        let pixel_total = counts.iter().sum();
        Ok(Self {
            row_taxonomy_id,
            col_taxonomy_id,
            row_classes,
            col_classes,
            counts,
            pixel_total,
        })
    }

    /// Zeroed matrix with the same shape and taxonomies.
    pub fn empty_like(&self) -> Self {
        Self {
            counts: vec![0; self.counts.len()],
            pixel_total: 0,
            ..self.clone()
        }
    }

    pub fn rows(&self) -> usize {
        self.row_classes.len()
    }

    pub fn cols(&self) -> usize {
        self.col_classes.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        let c = self.cols();
        &self.counts[row * c..(row + 1) * c]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn pixel_total(&self) -> u64 {
        self.pixel_total
    }

    pub fn row_taxonomy(&self) -> Taxonomy {
        Taxonomy::new(self.row_taxonomy_id.clone(), self.row_classes.clone())
    }

    pub fn col_taxonomy(&self) -> Taxonomy {
        Taxonomy::new(self.col_taxonomy_id.clone(), self.col_classes.clone())
    }

    /// Counts ground truth against foreign predictions. Pixels void on
    /// either side are skipped.
    pub fn accumulate_cooccurrence(&mut self, gt: &LabelRaster, foreign_pred: &LabelRaster) -> Result<()> {
        self.accumulate(gt, foreign_pred)
    }

    /// Same counting, with intra-domain predictions (or meta-dataset
    /// pseudo-labels) standing in for missing ground truth on the row side.
    pub fn accumulate_coincidence(&mut self, intra_pred: &LabelRaster, foreign_pred: &LabelRaster) -> Result<()> {
        self.accumulate(intra_pred, foreign_pred)
    }

    fn accumulate(&mut self, rows: &LabelRaster, cols: &LabelRaster) -> Result<()> {
        if !rows.same_shape(cols) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                rows.width, rows.height, cols.width, cols.height
            )));
        }
        for (raster, id) in [(rows, &self.row_taxonomy_id), (cols, &self.col_taxonomy_id)] {
            if &raster.taxonomy_id != id {
                return Err(Error::TaxonomyMismatch {
                    expected: id.clone(),
                    found: raster.taxonomy_id.clone(),
                });
            }
        }
        let (nr, nc) = (self.rows(), self.cols());
        // validate first so a bad raster leaves the accumulator untouched
        for (raster, n) in [(rows, nr), (cols, nc)] {
            if let Some(pixel) = raster.labels.iter().position(|&l| l != VOID && l as usize >= n) {
                return Err(Error::OutOfRangeLabel {
                    label: raster.labels[pixel] as u32,
                    pixel,
                    classes: n,
                });
            }
        }
        let mut added = 0u64;
        for (&r, &c) in rows.labels.iter().zip(&cols.labels) {
            if r != VOID && c != VOID {
                self.counts[r as usize * nc + c as usize] += 1;
                added += 1;
            }
        }
        self.pixel_total += added;
        Ok(())
    }

    /// Entrywise addition of a partial matrix over the same taxonomies.
    pub fn merge(&mut self, other: &CooccurrenceMatrix) -> Result<()> {
        if self.row_taxonomy_id != other.row_taxonomy_id || self.col_taxonomy_id != other.col_taxonomy_id {
            return Err(Error::TaxonomyMismatch {
                expected: format!("{} x {}", self.row_taxonomy_id, self.col_taxonomy_id),
                found: format!("{} x {}", other.row_taxonomy_id, other.col_taxonomy_id),
            });
        }
        if self.counts.len() != other.counts.len() {
            return Err(Error::DimensionMismatch("partial matrix shape differs".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.pixel_total += other.pixel_total;
        Ok(())
    }

    /// Accumulates `n` raster pairs produced by `pair` with per-worker
    /// partial matrices merged by addition. Equal to the sequential result.
    pub fn par_accumulate<F>(&self, n: usize, pair: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<(LabelRaster, LabelRaster)> + Sync,
    {
        let partial = (0..n)
            .into_par_iter()
            .try_fold(
                || self.empty_like(),
                |mut acc, i| {
                    let (rows, cols) = pair(i)?;
                    acc.accumulate(&rows, &cols)?;
                    Ok::<_, Error>(acc)
                },
            )
            .try_reduce(
                || self.empty_like(),
                |mut a, b| {
                    a.merge(&b)?;
                    Ok(a)
                },
            )?;
        let mut out = self.clone();
        out.merge(&partial)?;
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![format!("{}{CORNER_SEP}{}", self.row_taxonomy_id, self.col_taxonomy_id)];
        header.extend(self.col_classes.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.rows() {
            let mut rec = vec![self.row_classes[r].clone()];
            rec.extend(self.row(r).iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::MalformedHeader("empty co-occurrence CSV".into()))??;
        let corner = header.get(0).unwrap_or_default();
        let (row_id, col_id) = corner
            .split_once(CORNER_SEP)
            .ok_or_else(|| Error::MalformedHeader(format!("corner cell `{corner}` lacks taxonomy ids")))?;
        let col_classes: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut row_classes = Vec::new();
        let mut counts = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            let row = i + 1;
            if rec.len() != col_classes.len() + 1 {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("expected {} cells, found {}", col_classes.len() + 1, rec.len()),
                });
            }
            row_classes.push(rec[0].to_owned());
            for cell in rec.iter().skip(1) {
                counts.push(cell.trim().parse::<u64>().map_err(|_| Error::MalformedRow {
                    row,
                    reason: format!("`{cell}` is not a count"),
                })?);
            }
        }
        Self::from_counts(row_id.to_owned(), col_id.to_owned(), row_classes, col_classes, counts)
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        Self::read_csv(s.as_bytes())
    }
}
