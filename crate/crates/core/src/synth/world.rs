//! Latent worlds: atomic concepts grouped into dataset classes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{Taxonomy, UniversalTaxonomy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Flip to a uniformly random other class.
    #[default]
    Symmetric,
    /// Flip to the class of the nearest latent concept with a different label.
    Adjacent,
}

/// One dataset's view of the latent concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub classes: Vec<String>,
    /// Latent concepts of each class.
    pub groups: Vec<Vec<u32>>,
    /// For latents the dataset does not label: the class its model predicts
    /// instead.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub proxies: BTreeMap<u32, u32>,
}

impl DatasetSpec {
    pub fn taxonomy(&self) -> Taxonomy {
        Taxonomy::new(self.id.clone(), self.classes.clone())
    }

    /// Class of every latent concept, `None` where uncovered.
    pub fn class_of(&self, num_latent: usize) -> Vec<Option<u16>> {
        let mut out = vec![None; num_latent];
        for (c, g) in self.groups.iter().enumerate() {
            for &l in g {
                out[l as usize] = Some(c as u16);
            }
        }
        out
    }

    pub fn latent_set(&self, class: usize) -> BTreeSet<u32> {
        self.groups[class].iter().copied().collect()
    }
}

fn default_share() -> f64 {
    0.4
}

fn default_top_k() -> u16 {
    crate::ingest::DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWorld {
    pub seed: u64,
    /// Probability of each latent concept per pixel.
    pub prior: Vec<f64>,
    pub width: u32,
    pub height: u32,
    /// Label-flip rate of simulated predictions.
    pub noise: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    /// Share of the concatenation model's confidence on the native class
    /// when both datasets label the concept.
    #[serde(default = "default_share")]
    pub native_share: f64,
    #[serde(default = "default_top_k")]
    pub top_k: u16,
    pub datasets: Vec<DatasetSpec>,
}

impl LatentWorld {
    /// World with explicit groupings and the given prior weights
    /// (normalized).
    pub fn from_groups(weights: Vec<f64>, datasets: Vec<(String, Vec<Vec<u32>>)>, seed: u64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidParameter("prior weights must have a positive sum".into()));
        }
        let datasets = datasets
            .into_iter()
            .map(|(id, groups)| DatasetSpec {
                classes: groups.iter().map(|g| group_name(g)).collect(),
                id,
                groups,
                proxies: BTreeMap::new(),
            })
            .collect();
        let w = Self {
            seed,
            prior: weights.iter().map(|x| x / total).collect(),
            width: 32,
            height: 32,
            noise: 0.0,
            noise_model: NoiseModel::Symmetric,
            native_share: default_share(),
            top_k: default_top_k(),
            datasets,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn num_latent(&self) -> usize {
        self.prior.len()
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.id.clone()).collect()
    }

    pub fn taxonomies(&self) -> Vec<Taxonomy> {
        self.datasets.iter().map(DatasetSpec::taxonomy).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let n = self.num_latent();
        if n == 0 || n > u16::MAX as usize {
            return bad(format!("{n} latent concepts"));
        }
        if self.prior.iter().any(|&p| p.is_nan() || p < 0.0) || (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("prior must be a probability vector".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise rate {} outside [0, 1)", self.noise));
        }
        if !(self.native_share > 0.0 && self.native_share < 1.0) {
            return bad(format!("native share {} outside (0, 1)", self.native_share));
        }
        if self.width == 0 || self.height == 0 || self.top_k == 0 {
            return bad("image size and top-K must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(&d.id) {
                return bad(format!("duplicate dataset id `{}`", d.id));
            }
            if d.classes.len() != d.groups.len() || d.groups.is_empty() {
                return bad(format!("dataset `{}` needs one non-empty group per class", d.id));
            }
            let mut seen = BTreeSet::new();
            for g in &d.groups {
                if g.is_empty() {
                    return bad(format!("dataset `{}` has an empty group", d.id));
                }
                for &l in g {
                    if l as usize >= n || !seen.insert(l) {
                        return bad(format!("dataset `{}` reuses or exceeds latent {l}", d.id));
                    }
                }
            }
            for (&l, &c) in &d.proxies {
                if seen.contains(&l) || l as usize >= n || c as usize >= d.classes.len() {
                    return bad(format!("dataset `{}` has an invalid proxy {l} -> {c}", d.id));
                }
            }
            if let Some(v) = crate::taxonomy::validate_taxonomy(&d.taxonomy()).first() {
                return bad(v.to_string());
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("world serializes");
        s.push('\n');
        s
    }
}

fn group_name(g: &[u32]) -> String {
    let parts: Vec<String> = g.iter().map(|l| l.to_string()).collect();
    format!("l{}", parts.join("_"))
}

/// Relative weights of the block kinds a world is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingLaw {
    /// One concept labeled identically everywhere.
    pub overlap: f64,
    /// A small concept tree cut at different depths per dataset.
    pub subset: f64,
    /// Two concepts merged by one dataset while the other labels only the
    /// lighter one and confuses the heavier with a foreign class.
    pub foreign: f64,
    /// Three concepts split incompatibly (not representable by a flat
    /// taxonomy).
    pub interleaved: f64,
}

impl GroupingLaw {
    pub fn mixed() -> Self {
        Self {
            overlap: 0.4,
            subset: 0.35,
            foreign: 0.25,
            interleaved: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            overlap: 1.0,
            subset: 0.0,
            foreign: 0.0,
            interleaved: 0.0,
        }
    }

    pub fn interleaved() -> Self {
        Self {
            interleaved: 0.3,
            ..Self::mixed()
        }
    }
}

impl Default for GroupingLaw {
    fn default() -> Self {
        Self::mixed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Overlap,
    Subset,
    Foreign,
    Interleaved,
}

/// Nested grouping of a few latents.
#[derive(Debug, Clone)]
enum Tree {
    Leaf(u32),
    Node(Vec<Tree>),
}

impl Tree {
    fn random(latents: &[u32], rng: &mut ChaCha8Rng) -> Tree {
        if latents.len() == 1 {
            return Tree::Leaf(latents[0]);
        }
        let split = rng.gen_range(1..latents.len());
        let parts = [&latents[..split], &latents[split..]];
        let mut children = Vec::new();
        for p in parts {
            // flatten single-child chains so every inner node branches
            match Tree::random(p, rng) {
                Tree::Node(c) if rng.gen_bool(0.5) => children.extend(c),
                t => children.push(t),
            }
        }
        Tree::Node(children)
    }

    fn latents(&self) -> Vec<u32> {
        match self {
            Tree::Leaf(l) => vec![*l],
            Tree::Node(c) => c.iter().flat_map(Tree::latents).collect(),
        }
    }

    /// Random antichain covering every leaf; `split_root` forbids the root
    /// itself as the only group.
    fn cut(&self, split_root: bool, rng: &mut ChaCha8Rng, out: &mut Vec<Vec<u32>>) {
        match self {
            Tree::Node(children) if split_root || rng.gen_bool(0.5) => {
                for c in children {
                    c.cut(false, rng, out);
                }
            }
            t => out.push(t.latents()),
        }
    }
}

struct Builder {
    groups: Vec<Vec<Vec<u32>>>,
    proxies: Vec<Vec<(u32, Vec<u32>)>>,
    masses: Vec<f64>,
    overlaps: Vec<u32>,
}

impl Builder {
    fn latent(&mut self, mass: f64) -> u32 {
        self.masses.push(mass);
        (self.masses.len() - 1) as u32
    }
}

/// Reproducible world assembled from independent blocks drawn by `law`.
/// With three or more datasets only overlap and subset blocks are used, so
/// every pair of groups is nested or disjoint.
pub fn sample_world(num_latent: usize, num_datasets: usize, law: &GroupingLaw, seed: u64) -> Result<LatentWorld> {
    if num_latent == 0 || num_latent > u16::MAX as usize {
        return Err(Error::InvalidParameter(format!("{num_latent} latent concepts")));
    }
    if !(1..=26).contains(&num_datasets) {
        return Err(Error::InvalidParameter(format!("{num_datasets} datasets (1 to 26 supported)")));
    }
    let weights = [law.overlap, law.subset, law.foreign, law.interleaved];
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParameter("grouping law needs non-negative weights with a positive sum".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        groups: vec![Vec::new(); num_datasets],
        proxies: vec![Vec::new(); num_datasets],
        masses: Vec::new(),
        overlaps: Vec::new(),
    };
    let pair = num_datasets == 2;

    while b.masses.len() < num_latent {
        let left = num_latent - b.masses.len();
        let feasible = |k: Block, overlaps: usize| match k {
            Block::Overlap => true,
            Block::Subset => left >= 2,
            Block::Foreign => pair && left >= 2 && overlaps > 0,
            Block::Interleaved => pair && left >= 3,
        };
        let kinds = [Block::Overlap, Block::Subset, Block::Foreign, Block::Interleaved];
        let kind = if b.masses.is_empty() && law.foreign > 0.0 {
            Block::Overlap
        } else {
            let w: Vec<f64> = kinds
                .iter()
                .zip(weights)
                .map(|(&k, w)| if feasible(k, b.overlaps.len()) { w } else { 0.0 })
                .collect();
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                Block::Overlap
            } else {
                let mut x = rng.gen_range(0.0..total);
                let mut pick = Block::Overlap;
                for (&k, &wk) in kinds.iter().zip(&w) {
                    if x < wk {
                        pick = k;
                        break;
                    }
                    x -= wk;
                }
                pick
            }
        };
        match kind {
            Block::Overlap => {
                let l = b.latent(rng.gen_range(1.0..2.0));
                b.overlaps.push(l);
                for g in &mut b.groups {
                    g.push(vec![l]);
                }
            }
            Block::Subset => {
                let size = rng.gen_range(2..=left.min(4));
                let latents: Vec<u32> = (0..size).map(|_| b.latent(rng.gen_range(1.0..2.0))).collect();
                let tree = Tree::random(&latents, &mut rng);
                let coarse = rng.gen_range(0..num_datasets);
                for (d, g) in b.groups.iter_mut().enumerate() {
                    if pair {
                        if d == coarse {
                            g.push(tree.latents());
                        } else {
                            tree.cut(true, &mut rng, g);
                        }
                    } else {
                        tree.cut(false, &mut rng, g);
                    }
                }
            }
            Block::Foreign => {
                let p_mass = rng.gen_range(1.0..2.0);
                let p = b.latent(p_mass);
                let q = b.latent(p_mass * rng.gen_range(1.6..2.4));
                let coarse = rng.gen_range(0..2);
                let target = b.overlaps[rng.gen_range(0..b.overlaps.len())];
                b.groups[coarse].push(vec![p, q]);
                b.groups[1 - coarse].push(vec![p]);
                b.proxies[1 - coarse].push((q, vec![target]));
            }
            Block::Interleaved => {
                let m1 = rng.gen_range(1.0..1.3);
                let m2 = m1 * rng.gen_range(1.4..1.8);
                let m3 = m2 * rng.gen_range(1.4..1.8);
                let (l1, l2, l3) = (b.latent(m1), b.latent(m2), b.latent(m3));
                let first = rng.gen_range(0..2);
                b.groups[first].extend([vec![l1, l2], vec![l3]]);
                b.groups[1 - first].extend([vec![l1], vec![l2, l3]]);
            }
        }
    }

    let total: f64 = b.masses.iter().sum();
    let mut datasets = Vec::with_capacity(num_datasets);
    for (d, mut groups) in b.groups.into_iter().enumerate() {
        groups.shuffle(&mut rng);
        let proxies = b.proxies[d]
            .iter()
            .map(|(l, target)| {
                let c = groups.iter().position(|g| g == target).expect("proxy target exists");
                (*l, c as u32)
            })
            .collect();
        datasets.push(DatasetSpec {
            id: ((b'a' + d as u8) as char).to_string(),
            classes: groups.iter().map(|g| group_name(g)).collect(),
            groups,
            proxies,
        });
    }
    let world = LatentWorld {
        seed,
        prior: b.masses.iter().map(|m| m / total).collect(),
        width: 32,
        height: 32,
        noise: 0.0,
        noise_model: NoiseModel::Symmetric,
        native_share: default_share(),
        top_k: default_top_k(),
        datasets,
    };
    world.validate()?;
    Ok(world)
}

/// Fraction of cross-dataset class pairs on which the recovered taxonomy
/// agrees with the latent structure: two classes should share a universal
/// class iff their latent groups intersect.
pub fn recovery_score(recovered: &UniversalTaxonomy, world: &LatentWorld) -> Result<f64> {
    let mut maps = Vec::with_capacity(world.datasets.len());
    for d in &world.datasets {
        let m = recovered.mapping(&d.id).ok_or_else(|| Error::TaxonomyMismatch {
            expected: d.id.clone(),
            found: recovered.mappings.keys().cloned().collect::<Vec<_>>().join(", "),
        })?;
        if m.len() != d.classes.len() {
            return Err(Error::DimensionMismatch(format!(
                "`{}` has {} classes, mapping has {}",
                d.id,
                d.classes.len(),
                m.len()
            )));
        }
        maps.push(m);
    }
    let (mut agree, mut total) = (0u64, 0u64);
    for (i, di) in world.datasets.iter().enumerate() {
        for (j, dj) in world.datasets.iter().enumerate().skip(i + 1) {
            for (ci, gi) in di.groups.iter().enumerate() {
                for (cj, gj) in dj.groups.iter().enumerate() {
                    let truth = gi.iter().any(|l| gj.contains(l));
                    let shared = maps[i][ci].iter().any(|u| maps[j][cj].contains(u));
                    agree += (truth == shared) as u64;
                    total += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { agree as f64 / total as f64 })
}
