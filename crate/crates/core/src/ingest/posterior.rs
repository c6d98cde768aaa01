//! Sparse top-K per-pixel posteriors.
//!
//! Binary layout (`SEGP`, little-endian):
//!
//! ```text
//! "SEGP" | version u8 = 1 | K u16 | width u32 | height u32 |
//! per pixel: K × (class u16, probability f32)
//! ```
//!
//! Pixels with fewer than K non-zero classes are padded at the tail with
//! `(PAD_CLASS, 0.0)`. Classes outside the stored top-K have probability 0.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const POSTERIOR_MAGIC: &[u8; 4] = b"SEGP";
pub const POSTERIOR_VERSION: u8 = 1;
pub const PAD_CLASS: u16 = u16::MAX;
pub const DEFAULT_TOP_K: u16 = 8;
const HEADER_LEN: usize = 4 + 1 + 2 + 4 + 4;
const ENTRY_LEN: usize = 6;
const SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEntry {
    pub class: u16,
    pub prob: f32,
}

impl PosteriorEntry {
    pub const PAD: PosteriorEntry = PosteriorEntry {
        class: PAD_CLASS,
        prob: 0.0,
    };

    pub fn is_pad(&self) -> bool {
        self.class == PAD_CLASS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDump {
    pub width: u32,
    pub height: u32,
    pub k: u16,
    pub taxonomy_id: String,
    entries: Vec<PosteriorEntry>,
}

impl PosteriorDump {
    /// Builds a dump from per-pixel sparse distributions. Each pixel is
    /// sorted by descending probability (ties by class index), truncated to
    /// `k` and padded.
    pub fn from_pixels<I>(
        taxonomy_id: impl Into<String>,
        width: u32,
        height: u32,
        k: u16,
        num_classes: usize,
        pixels: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<(u16, f32)>>,
    {
        if k == 0 {
            return Err(Error::InvalidParameter("top-K must be positive".into()));
        }
        let n = width as usize * height as usize;
        let mut entries = Vec::with_capacity(n * k as usize);
        let mut count = 0;
        for mut px in pixels {
            px.retain(|&(_, p)| p > 0.0);
            px.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            px.truncate(k as usize);
            let used = px.len();
            entries.extend(px.into_iter().map(|(class, prob)| PosteriorEntry { class, prob }));
            entries.extend(std::iter::repeat_n(PosteriorEntry::PAD, k as usize - used));
            count += 1;
        }
        if count != n {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} dump needs {n} pixels, got {count}"
            )));
        }
        let dump = Self {
            width,
            height,
            k,
            taxonomy_id: taxonomy_id.into(),
            entries,
        };
        dump.validate(num_classes)?;
        Ok(dump)
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, i: usize) -> &[PosteriorEntry] {
        let k = self.k as usize;
        &self.entries[i * k..(i + 1) * k]
    }

    /// Non-padding entries of pixel `i`.
    pub fn active(&self, i: usize) -> impl Iterator<Item = &PosteriorEntry> {
        self.pixel(i).iter().take_while(|e| !e.is_pad())
    }

    /// Checks the per-pixel invariants against a label space of `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for i in 0..self.num_pixels() {
            let px = self.pixel(i);
            let mut sum = 0.0f64;
            let mut prev = f32::INFINITY;
            let mut padded = false;
            for (slot, e) in px.iter().enumerate() {
                if e.is_pad() {
                    if e.prob != 0.0 {
                        return Err(bad(i, "padding entry with non-zero probability"));
                    }
                    padded = true;
                    continue;
                }
                if padded {
                    return Err(bad(i, "class entry after padding"));
                }
                if e.class as usize >= num_classes {
                    return Err(Error::OutOfRangeLabel {
                        label: e.class as u32,
                        pixel: i,
                        classes: num_classes,
                    });
                }
                if !(0.0..=1.0).contains(&e.prob) {
                    return Err(bad(i, "probability outside [0, 1]"));
                }
                if e.prob > prev {
                    return Err(bad(i, "probabilities are not non-increasing"));
                }
                if px[..slot].iter().any(|o| o.class == e.class) {
                    return Err(bad(i, "repeated class index"));
                }
                prev = e.prob;
                sum += e.prob as f64;
            }
            if sum > 1.0 + SUM_TOLERANCE {
                return Err(bad(i, "probabilities sum above 1"));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * ENTRY_LEN);
        out.extend_from_slice(POSTERIOR_MAGIC);
        out.push(POSTERIOR_VERSION);
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.class.to_le_bytes());
            out.extend_from_slice(&e.prob.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], taxonomy_id: &str, num_classes: usize) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "posterior header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != POSTERIOR_MAGIC {
            return Err(Error::MalformedHeader("bad posterior magic".into()));
        }
        if bytes[4] != POSTERIOR_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported posterior version {}",
                bytes[4]
            )));
        }
        let k = u16::from_le_bytes([bytes[5], bytes[6]]);
        if k == 0 {
            return Err(Error::MalformedHeader("K = 0".into()));
        }
        let width = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[11..15].try_into().unwrap());
        let n = width as usize * height as usize * k as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < n * ENTRY_LEN {
            return Err(Error::Truncated {
                expected: n * ENTRY_LEN,
                found: payload.len(),
            });
        }
        let entries = payload[..n * ENTRY_LEN]
            .chunks_exact(ENTRY_LEN)
            .map(|c| PosteriorEntry {
                class: u16::from_le_bytes([c[0], c[1]]),
                prob: f32::from_le_bytes([c[2], c[3], c[4], c[5]]),
            })
            .collect();
        let dump = Self {
            width,
            height,
            k,
            taxonomy_id: taxonomy_id.to_owned(),
            entries,
        };
        dump.validate(num_classes)?;
        Ok(dump)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

pub fn load_posterior_dump(
    path: impl AsRef<Path>,
    taxonomy_id: &str,
    num_classes: usize,
) -> Result<PosteriorDump> {
    let bytes = fs::read(path)?;
    PosteriorDump::decode(&bytes, taxonomy_id, num_classes)
}

fn bad(pixel: usize, reason: &str) -> Error {
    Error::InvalidPosterior(format!("pixel {pixel}: {reason}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pixels_are_sorted_truncated_and_padded() {
        let d = PosteriorDump::from_pixels(
            "x",
            2,
            1,
            3,
            10,
            vec![
                vec![(4, 0.1), (2, 0.6), (7, 0.2), (9, 0.1)],
                vec![(1, 1.0)],
            ],
        )
        .unwrap();
        let p0: Vec<_> = d.pixel(0).iter().map(|e| (e.class, e.prob)).collect();
        assert_eq!(p0, vec![(2, 0.6), (7, 0.2), (4, 0.1)]);
        assert_eq!(d.active(1).count(), 1);
        assert!(d.pixel(1)[2].is_pad());
    }

    #[test]
    fn invalid_pixels_are_rejected() {
        let over = PosteriorDump::from_pixels("x", 1, 1, 2, 4, vec![vec![(0, 0.7), (1, 0.7)]]);
        assert!(matches!(over, Err(Error::InvalidPosterior(_))));
        let range = PosteriorDump::from_pixels("x", 1, 1, 2, 2, vec![vec![(3, 0.5)]]);
        assert!(matches!(range, Err(Error::OutOfRangeLabel { .. })));
        let count = PosteriorDump::from_pixels("x", 2, 1, 2, 2, vec![vec![(0, 0.5)]]);
        assert!(matches!(count, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn decode_rejects_repeated_classes_and_truncation() {
        let d = PosteriorDump::from_pixels("x", 1, 1, 2, 4, vec![vec![(1, 0.5), (2, 0.4)]]).unwrap();
        let mut bytes = d.encode();
        // overwrite second class with the first
        bytes[15 + 6] = 1;
        assert!(matches!(
            PosteriorDump::decode(&bytes, "x", 4),
            Err(Error::InvalidPosterior(_))
        ));
        let bytes = d.encode();
        assert!(matches!(
            PosteriorDump::decode(&bytes[..bytes.len() - 1], "x", 4),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            PosteriorDump::decode(b"SEGQ", "x", 4),
            Err(Error::MalformedHeader(_))
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            k in 1u16..6,
            pixels in prop::collection::vec(prop::collection::btree_map(0u16..20, 1u32..100, 0..6), 1..12),
        ) {
            let n = pixels.len() as u32;
            let dists: Vec<Vec<(u16, f32)>> = pixels
                .iter()
                .map(|m| {
                    let total: u32 = m.values().sum::<u32>() + 1;
                    m.iter().map(|(&c, &w)| (c, w as f32 / total as f32)).collect()
                })
                .collect();
            let d = PosteriorDump::from_pixels("x", n, 1, k, 20, dists).unwrap();
            prop_assert_eq!(PosteriorDump::decode(&d.encode(), "x", 20).unwrap(), d);
        }
    }
}
