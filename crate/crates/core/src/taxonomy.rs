//! Core domain types: dataset taxonomies, class references, relation
//! hypotheses, universal taxonomies and partial-label matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-memory sentinel for unlabeled pixels, independent of on-disk width.
pub const VOID: u16 = u16::MAX;

/// Largest number of classes a taxonomy may hold before its indices would
/// collide with the 16-bit void label.
pub const MAX_CLASSES: usize = u16::MAX as usize;

/// An ordered set of mutually disjoint classes defined by one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub dataset_id: String,
    pub classes: Vec<String>,
    /// Class names already carry their dataset qualification (true for
    /// taxonomies derived from a merge).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub qualified: bool,
}

impl Taxonomy {
    pub fn new(dataset_id: impl Into<String>, classes: Vec<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            classes,
            qualified: false,
        }
    }

    /// Validating constructor.
    pub fn checked(dataset_id: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        let t = Self::new(dataset_id, classes);
        let report = validate_taxonomy(&t);
        match report.first() {
            None => Ok(t),
            Some(v) => Err(Error::InvalidTaxonomy(v.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// On-disk void label: 255 for taxonomies that fit an 8-bit raster,
    /// 65535 otherwise.
    pub fn void_label(&self) -> u16 {
        if self.classes.len() <= 255 {
            255
        } else {
            u16::MAX
        }
    }

    pub fn class_ref(&self, index: usize) -> ClassRef {
        ClassRef::new(self.dataset_id.clone(), index as u32)
    }

    /// Display name of a class, `"<dataset>-<class>"` unless already qualified.
    pub fn qualified_name(&self, index: usize) -> String {
        if self.qualified {
            self.classes[index].clone()
        } else {
            format!("{}-{}", self.dataset_id, self.classes[index])
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        s.push('\n');
        s
    }
}

/// Identity of a dataset-specific class. Names are display metadata only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassRef {
    pub dataset: String,
    pub class: u32,
}

impl ClassRef {
    pub fn new(dataset: impl Into<String>, class: u32) -> Self {
        Self {
            dataset: dataset.into(),
            class,
        }
    }

    pub fn index(&self) -> usize {
        self.class as usize
    }
}

impl fmt::Display for ClassRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset, self.class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Overlap,
    Subset,
}

/// A hypothesized relation between classes of two datasets.
///
/// `Subset` reads `subject ⊂ object`. `Overlap` is symmetric and stored once
/// with `subject < object` in canonical `(dataset, class)` order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationHypothesis {
    pub kind: RelationKind,
    pub subject: ClassRef,
    pub object: ClassRef,
    pub support: u64,
}

impl RelationHypothesis {
    pub fn overlap(x: ClassRef, y: ClassRef, support: u64) -> Self {
        let (subject, object) = if x <= y { (x, y) } else { (y, x) };
        Self {
            kind: RelationKind::Overlap,
            subject,
            object,
            support,
        }
    }

    pub fn subset(subject: ClassRef, object: ClassRef, support: u64) -> Self {
        Self {
            kind: RelationKind::Subset,
            subject,
            object,
            support,
        }
    }
}

impl fmt::Display for RelationHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            RelationKind::Overlap => "~",
            RelationKind::Subset => "<",
        };
        write!(f, "{} {} {}", self.subject, op, self.object)
    }
}

/// Two mutually exclusive subset hypotheses induced by an inconsistent
/// triplet `x -> y -> z`: `x ⊂ y` competes with `y ⊂ z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub hypothesis_a: RelationHypothesis,
    pub hypothesis_b: RelationHypothesis,
    pub triplet: [ClassRef; 3],
}

impl ConflictPair {
    pub fn combined_support(&self) -> u64 {
        self.hypothesis_a.support + self.hypothesis_b.support
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalClass {
    pub name: String,
    pub members: Vec<ClassRef>,
}

/// Flat set of disjoint universal classes with 1:N mappings from every
/// contributing dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalTaxonomy {
    pub universal_classes: Vec<UniversalClass>,
    /// Per dataset: outer index is the dataset class, inner list the
    /// universal classes it maps to (ascending).
    pub mappings: BTreeMap<String, Vec<Vec<u32>>>,
}

impl UniversalTaxonomy {
    pub fn len(&self) -> usize {
        self.universal_classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.universal_classes.is_empty()
    }

    pub fn mapping(&self, dataset: &str) -> Option<&[Vec<u32>]> {
        self.mappings.get(dataset).map(Vec::as_slice)
    }

    pub fn names(&self) -> Vec<String> {
        self.universal_classes.iter().map(|u| u.name.clone()).collect()
    }

    /// Flat view used when a merge result takes part in the next round.
    pub fn as_taxonomy(&self, id: impl Into<String>) -> Taxonomy {
        Taxonomy {
            dataset_id: id.into(),
            classes: self.names(),
            qualified: true,
        }
    }

    /// Universal class → owning class of `dataset`, if any.
    pub fn inverse(&self, dataset: &str) -> Option<Vec<Option<u32>>> {
        let mapping = self.mappings.get(dataset)?;
        let mut inv = vec![None; self.len()];
        for (c, us) in mapping.iter().enumerate() {
            for &u in us {
                if let Some(slot) = inv.get_mut(u as usize) {
                    *slot = Some(c as u32);
                }
            }
        }
        Some(inv)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Canonical serialization; stable given canonical class ordering.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("universal taxonomy serializes");
        s.push('\n');
        s
    }
}

/// Binary `|T_d| × |U|` matrix with entry `(c, u) = 1` iff `u ∈ mapping_d(c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialLabelMatrix {
    pub dataset_id: String,
    pub rows: usize,
    pub cols: usize,
    data: Vec<u8>,
}

impl PartialLabelMatrix {
    pub fn from_mapping(dataset_id: &str, mapping: &[Vec<u32>], universal: usize) -> Result<Self> {
        let mut data = vec![0u8; mapping.len() * universal];
        for (c, us) in mapping.iter().enumerate() {
            for &u in us {
                let u = u as usize;
                if u >= universal {
                    return Err(Error::InvalidUniversal(format!(
                        "{dataset_id}:{c} maps to universal class {u} of {universal}"
                    )));
                }
                data[c * universal + u] = 1;
            }
        }
        Ok(Self {
            dataset_id: dataset_id.to_owned(),
            rows: mapping.len(),
            cols: universal,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<u32> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|&v| v as u32).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u32> {
        let mut sums = vec![0u32; self.cols];
        for r in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(r)) {
                *s += v as u32;
            }
        }
        sums
    }

    /// Dataset posterior from a universal posterior: `M · p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.cols, "posterior length must equal |U|");
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(p)
                    .filter(|(&m, _)| m == 1)
                    .map(|(_, &v)| v)
                    .sum()
            })
            .collect()
    }

    /// CSV with dataset class names down the first column and universal
    /// class names across the header.
    pub fn to_csv(&self, taxonomy: &Taxonomy, universal: &UniversalTaxonomy) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.dataset_id.clone()];
        header.extend(universal.names());
        w.write_record(&header)?;
        for r in 0..self.rows {
            let mut rec = vec![taxonomy.classes[r].clone()];
            rec.extend(self.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// A single invariant violation found by a validator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateName(String),
    VoidCollision { classes: usize },
    DuplicateUniversalName(String),
    IntraDatasetMemberPair { universal: u32, dataset: String },
    NonDisjointMapping { universal: u32, first: ClassRef, second: ClassRef },
    UnmappedClass(ClassRef),
    MappingOutOfRange { class: ClassRef, universal: u32 },
    MissingFromImage { universal: u32, member: ClassRef },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty: taxonomy has no classes"),
            Violation::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            Violation::VoidCollision { classes } => {
                write!(f, "void collision: {classes} classes reach the void label")
            }
            Violation::DuplicateUniversalName(n) => write!(f, "duplicate universal name `{n}`"),
            Violation::IntraDatasetMemberPair { universal, dataset } => write!(
                f,
                "intra-dataset member pair: universal class {universal} has two members from `{dataset}`"
            ),
            Violation::NonDisjointMapping {
                universal,
                first,
                second,
            } => write!(
                f,
                "non-disjoint mapping: {first} and {second} both map to universal class {universal}"
            ),
            Violation::UnmappedClass(c) => write!(f, "unmapped class {c}"),
            Violation::MappingOutOfRange { class, universal } => {
                write!(f, "mapping out of range: {class} -> {universal}")
            }
            Violation::MissingFromImage { universal, member } => write!(
                f,
                "universal class {universal} is missing from the mapping image of member {member}"
            ),
        }
    }
}

pub fn validate_taxonomy(t: &Taxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.classes.is_empty() {
        out.push(Violation::Empty);
    }
    let mut seen = BTreeSet::new();
    for name in &t.classes {
        if !seen.insert(name.as_str()) {
            out.push(Violation::DuplicateName(name.clone()));
        }
    }
    if t.classes.len() > MAX_CLASSES {
        out.push(Violation::VoidCollision {
            classes: t.classes.len(),
        });
    }
    out
}

pub fn validate_universal(u: &UniversalTaxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = u.len() as u32;

    let mut names = BTreeSet::new();
    for class in &u.universal_classes {
        if !names.insert(class.name.as_str()) {
            out.push(Violation::DuplicateUniversalName(class.name.clone()));
        }
    }

    for (ui, class) in u.universal_classes.iter().enumerate() {
        let mut datasets = BTreeSet::new();
        for m in &class.members {
            if !datasets.insert(m.dataset.as_str()) {
                out.push(Violation::IntraDatasetMemberPair {
                    universal: ui as u32,
                    dataset: m.dataset.clone(),
                });
            }
        }
    }

    for (dataset, mapping) in &u.mappings {
        let mut owner: Vec<Option<u32>> = vec![None; u.len()];
        for (c, us) in mapping.iter().enumerate() {
            let cref = ClassRef::new(dataset.clone(), c as u32);
            if us.is_empty() {
                out.push(Violation::UnmappedClass(cref.clone()));
            }
            for &uc in us {
                if uc >= n {
                    out.push(Violation::MappingOutOfRange {
                        class: cref.clone(),
                        universal: uc,
                    });
                    continue;
                }
                match owner[uc as usize] {
                    Some(prev) if prev != c as u32 => out.push(Violation::NonDisjointMapping {
                        universal: uc,
                        first: ClassRef::new(dataset.clone(), prev),
                        second: cref.clone(),
                    }),
                    _ => owner[uc as usize] = Some(c as u32),
                }
            }
        }
    }

    for (ui, class) in u.universal_classes.iter().enumerate() {
        for m in &class.members {
            let Some(mapping) = u.mappings.get(&m.dataset) else {
                continue;
            };
            let present = mapping
                .get(m.index())
                .is_some_and(|us| us.contains(&(ui as u32)));
            if !present {
                out.push(Violation::MissingFromImage {
                    universal: ui as u32,
                    member: m.clone(),
                });
            }
        }
    }
    out
}

/// All partial-label matrices of a universal taxonomy, in dataset order.
pub fn partial_label_matrices(u: &UniversalTaxonomy) -> Result<Vec<PartialLabelMatrix>> {
    if let Some(v) = validate_universal(u).first() {
        return Err(Error::InvalidUniversal(v.to_string()));
    }
    u.mappings
        .iter()
        .map(|(d, m)| PartialLabelMatrix::from_mapping(d, m, u.len()))
        .collect()
}
