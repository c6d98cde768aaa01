//! Label rasters and their on-disk encodings.
//!
//! Native format (`SEGR`, little-endian):
//!
//! ```text
//! "SEGR" | version u8 = 1 | bits u8 ∈ {8, 16} | width u32 | height u32 | labels
//! ```
//!
//! Void is 255 in 8-bit files and 65535 in 16-bit files. Binary PGM (`P5`)
//! is accepted on load for interchange.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::taxonomy::{Taxonomy, VOID};

pub const RASTER_MAGIC: &[u8; 4] = b"SEGR";
pub const RASTER_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4;

/// Row-major per-pixel class indices over one taxonomy; [`VOID`] marks
/// unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
    pub taxonomy_id: String,
}

impl LabelRaster {
    pub fn new(taxonomy_id: impl Into<String>, width: u32, height: u32, labels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "raster must be non-empty, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} raster needs {expected} labels, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            taxonomy_id: taxonomy_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn same_shape(&self, other: &LabelRaster) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Checks taxonomy identity and that every non-void label is in range.
    pub fn check(&self, taxonomy: &Taxonomy) -> Result<()> {
        if self.taxonomy_id != taxonomy.dataset_id {
            return Err(Error::TaxonomyMismatch {
                expected: taxonomy.dataset_id.clone(),
                found: self.taxonomy_id.clone(),
            });
        }
        check_labels(&self.labels, taxonomy.len())
    }

    pub fn encode(&self, taxonomy: &Taxonomy) -> Vec<u8> {
        let bits: u8 = if taxonomy.len() <= 255 { 8 } else { 16 };
        let bytes_per = bits as usize / 8;
        let mut out = Vec::with_capacity(HEADER_LEN + self.labels.len() * bytes_per);
        out.extend_from_slice(RASTER_MAGIC);
        out.push(RASTER_VERSION);
        out.push(bits);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        match bits {
            8 => out.extend(self.labels.iter().map(|&l| if l == VOID { 255 } else { l as u8 })),
            _ => {
                for &l in &self.labels {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], taxonomy: &Taxonomy) -> Result<Self> {
        if bytes.starts_with(b"P5") {
            return decode_pgm(bytes, taxonomy);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "raster header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != RASTER_MAGIC {
            return Err(Error::MalformedHeader("bad raster magic".into()));
        }
        if bytes[4] != RASTER_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported raster version {}",
                bytes[4]
            )));
        }
        let bits = bytes[5];
        if bits != 8 && bits != 16 {
            return Err(Error::MalformedHeader(format!("bits-per-label {bits}")));
        }
        let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let n = width as usize * height as usize;
        let payload = &bytes[HEADER_LEN..];
        let labels = unpack(payload, n, bits as usize / 8, false)?;
        let raster = LabelRaster::new(taxonomy.dataset_id.clone(), width, height, labels)?;
        check_labels(&raster.labels, taxonomy.len())?;
        Ok(raster)
    }

    pub fn save(&self, path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<()> {
        fs::write(path, self.encode(taxonomy))?;
        Ok(())
    }
}

pub fn load_raster(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<LabelRaster> {
    let bytes = fs::read(path)?;
    LabelRaster::decode(&bytes, taxonomy)
}

fn check_labels(labels: &[u16], classes: usize) -> Result<()> {
    match labels
        .iter()
        .position(|&l| l != VOID && l as usize >= classes)
    {
        None => Ok(()),
        Some(pixel) => Err(Error::OutOfRangeLabel {
            label: labels[pixel] as u32,
            pixel,
            classes,
        }),
    }
}

fn unpack(payload: &[u8], n: usize, bytes_per: usize, big_endian: bool) -> Result<Vec<u16>> {
    let expected = n * bytes_per;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    Ok(match bytes_per {
        1 => payload
            .iter()
            .map(|&b| if b == 255 { VOID } else { b as u16 })
            .collect(),
        _ => payload
            .chunks_exact(2)
            .map(|c| {
                let pair = [c[0], c[1]];
                if big_endian {
                    u16::from_be_bytes(pair)
                } else {
                    u16::from_le_bytes(pair)
                }
            })
            .collect(),
    })
}

fn decode_pgm(bytes: &[u8], taxonomy: &Taxonomy) -> Result<LabelRaster> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("bad PGM header field".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader("missing PGM header terminator".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("PGM maxval {maxval}")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let labels = unpack(&bytes[pos..], width * height, bytes_per, true)?;
    let raster = LabelRaster::new(taxonomy.dataset_id.clone(), width as u32, height as u32, labels)?;
    check_labels(&raster.labels, taxonomy.len())?;
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tax(n: usize) -> Taxonomy {
        Taxonomy::new("t", (0..n).map(|i| format!("c{i}")).collect())
    }

    #[test]
    fn void_uses_255_in_8_bit_files() {
        let t = tax(3);
        let r = LabelRaster::new("t", 2, 1, vec![2, VOID]).unwrap();
        let bytes = r.encode(&t);
        assert_eq!(&bytes[..6], b"SEGR\x01\x08");
        assert_eq!(&bytes[14..], &[2, 255]);
        assert_eq!(LabelRaster::decode(&bytes, &t).unwrap(), r);
    }

    #[test]
    fn wide_taxonomies_use_16_bit_labels() {
        let t = tax(300);
        let r = LabelRaster::new("t", 1, 2, vec![299, VOID]).unwrap();
        let bytes = r.encode(&t);
        assert_eq!(bytes[5], 16);
        assert_eq!(&bytes[14..], &[43, 1, 255, 255]);
        assert_eq!(LabelRaster::decode(&bytes, &t).unwrap(), r);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let r = LabelRaster::new("t", 2, 1, vec![0, 5]).unwrap();
        let bytes = r.encode(&tax(10));
        let err = LabelRaster::decode(&bytes, &tax(3)).unwrap_err();
        assert!(err.to_string().contains("out-of-range label"), "{err}");
    }

    #[test]
    fn malformed_and_truncated_files() {
        let t = tax(3);
        assert!(matches!(
            LabelRaster::decode(b"SEGX\x01\x08\x01\0\0\0\x01\0\0\0\0", &t),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(LabelRaster::decode(b"SEG", &t), Err(Error::MalformedHeader(_))));
        let r = LabelRaster::new("t", 4, 4, vec![0; 16]).unwrap();
        let bytes = r.encode(&t);
        assert!(matches!(
            LabelRaster::decode(&bytes[..bytes.len() - 3], &t),
            Err(Error::Truncated { expected: 16, found: 13 })
        ));
    }

    #[test]
    fn pgm_16_bit_is_accepted() {
        let mut bytes = b"P5\n# labels\n3 1\n65535\n".to_vec();
        for v in [1u16, 0, 65535] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let r = LabelRaster::decode(&bytes, &tax(2)).unwrap();
        assert_eq!(r.labels, vec![1, 0, VOID]);
        assert_eq!((r.width, r.height), (3, 1));
    }

    #[test]
    fn pgm_8_bit_is_accepted() {
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[1, 255]);
        let r = LabelRaster::decode(&bytes, &tax(2)).unwrap();
        assert_eq!(r.labels, vec![1, VOID]);
    }

    #[test]
    fn taxonomy_mismatch_is_detected() {
        let r = LabelRaster::new("other", 1, 1, vec![0]).unwrap();
        assert!(matches!(r.check(&tax(1)), Err(Error::TaxonomyMismatch { .. })));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            classes in 1usize..600,
            w in 1u32..9,
            h in 1u32..9,
            seed in any::<u64>(),
        ) {
            let t = tax(classes);
            let n = (w * h) as usize;
            let labels: Vec<u16> = (0..n)
                .map(|i| {
                    let x = seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 33;
                    if x % 7 == 0 { VOID } else { (x % classes as u64) as u16 }
                })
                .collect();
            let r = LabelRaster::new("t", w, h, labels).unwrap();
            prop_assert_eq!(LabelRaster::decode(&r.encode(&t), &t).unwrap(), r);
        }
    }
}
