//! Rasters, predictions and posteriors drawn from a latent world.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphOptions;
use crate::ingest::{CooccurrenceMatrix, LabelRaster, PosteriorDump};
use crate::merge::{run_schedule, Evidence, EvidenceSource, MergeNode, MergeSchedule, MetaDataset};
use crate::resolve::{ConcatSpace, EvalData, EvalRecord};
use crate::taxonomy::{Taxonomy, VOID};

use super::world::{LatentWorld, NoiseModel};

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Latent = 1,
    Foreign = 2,
    Intra = 3,
    Posterior = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-latent labels of one merge node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    pub id: String,
    pub taxonomy: Taxonomy,
    /// Class the node's annotation assigns to each latent.
    pub truth: Vec<Option<u16>>,
    /// Class the node's model predicts for each latent, including proxies
    /// for unlabeled concepts.
    pub foreign: Vec<Option<u16>>,
    /// Indices of the original datasets in the node.
    pub members: Vec<usize>,
}

/// Deterministic sampler of everything the pipeline consumes.
#[derive(Debug, Clone)]
pub struct Simulation {
    world: LatentWorld,
    images: usize,
    eval_images: Option<usize>,
    latents: Vec<Vec<Vec<u16>>>,
    nodes: BTreeMap<String, NodeLabels>,
}

impl Simulation {
    /// Samples `images` latent rasters per dataset.
    pub fn new(world: LatentWorld, images: usize) -> Result<Self> {
        world.validate()?;
        if images == 0 {
            return Err(Error::InvalidParameter("at least one image per dataset".into()));
        }
        let dist = WeightedIndex::new(&world.prior).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let n = world.width as usize * world.height as usize;
        let latents = (0..world.datasets.len())
            .map(|d| {
                (0..images)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = stream(world.seed, d, i, Purpose::Latent, 0);
                        (0..n).map(|_| dist.sample(&mut rng) as u16).collect()
                    })
                    .collect()
            })
            .collect();
        let num_latent = world.num_latent();
        let nodes = world
            .datasets
            .iter()
            .enumerate()
            .map(|(d, spec)| {
                let truth = spec.class_of(num_latent);
                let mut foreign = truth.clone();
                for (&l, &c) in &spec.proxies {
                    foreign[l as usize] = Some(c as u16);
                }
                let labels = NodeLabels {
                    id: spec.id.clone(),
                    taxonomy: spec.taxonomy(),
                    truth,
                    foreign,
                    members: vec![d],
                };
                (spec.id.clone(), labels)
            })
            .collect();
        Ok(Self {
            world,
            images,
            eval_images: None,
            latents,
            nodes,
        })
    }

    /// Caps the images per side used for evaluation records.
    pub fn with_eval_images(mut self, cap: Option<usize>) -> Self {
        self.eval_images = cap;
        self
    }

    pub fn world(&self) -> &LatentWorld {
        &self.world
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn node(&self, id: &str) -> Result<&NodeLabels> {
        self.nodes.get(id).ok_or_else(|| Error::TaxonomyMismatch {
            expected: self.nodes.keys().cloned().collect::<Vec<_>>().join(", "),
            found: id.to_owned(),
        })
    }

    pub fn leaves(&self) -> BTreeMap<String, Taxonomy> {
        self.world.datasets.iter().map(|d| (d.id.clone(), d.taxonomy())).collect()
    }

    pub fn latent_image(&self, dataset: usize, image: usize) -> &[u16] {
        &self.latents[dataset][image]
    }

    fn dataset_index(&self, id: &str) -> Result<usize> {
        self.world
            .datasets
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| Error::TaxonomyMismatch {
                expected: self.world.dataset_ids().join(", "),
                found: id.to_owned(),
            })
    }

    /// Adds the labels of a merged node.
    pub fn register(&mut self, meta: &MetaDataset) -> Result<()> {
        let x = self.node(meta.left.id())?.clone();
        let y = self.node(meta.right.id())?.clone();
        let u = &meta.universal;
        let map = |n: &NodeLabels| {
            u.mapping(&n.id)
                .map(|m| m.to_vec())
                .ok_or_else(|| Error::BrokenChain(format!("`{}` has no mapping for `{}`", meta.id, n.id)))
        };
        let (mx, my) = (map(&x)?, map(&y)?);
        let lacks = |k: u32, other: &str| !u.universal_classes[k as usize].members.iter().any(|m| m.dataset == other);
        let combine = |a: Option<u16>, b: Option<u16>| -> Option<u16> {
            let pick = |cands: &[u32], other: &str| {
                cands.iter().copied().find(|&k| lacks(k, other)).or(cands.first().copied())
            };
            let k = match (a, b) {
                (Some(a), Some(b)) => {
                    let (ca, cb) = (&mx[a as usize], &my[b as usize]);
                    ca.iter().copied().find(|k| cb.contains(k)).or(ca.first().copied())
                }
                (Some(a), None) => pick(&mx[a as usize], &y.id),
                (None, Some(b)) => pick(&my[b as usize], &x.id),
                (None, None) => None,
            };
            k.map(|k| k as u16)
        };
        let n = self.world.num_latent();
        let truth: Vec<Option<u16>> = (0..n).map(|l| combine(x.truth[l], y.truth[l])).collect();
        let foreign = (0..n)
            .map(|l| truth[l].or_else(|| combine(x.foreign[l], y.foreign[l])))
            .collect();
        let mut members = x.members.clone();
        members.extend(&y.members);
        self.nodes.insert(
            meta.id.clone(),
            NodeLabels {
                id: meta.id.clone(),
                taxonomy: meta.taxonomy.clone(),
                truth,
                foreign,
                members,
            },
        );
        Ok(())
    }

    fn noisy(&self, table: &[Option<u16>], classes: usize, latent: usize, rng: &mut ChaCha8Rng) -> u16 {
        let Some(c) = table[latent] else { return VOID };
        if classes < 2 || self.world.noise == 0.0 || !rng.gen_bool(self.world.noise) {
            return c;
        }
        if self.world.noise_model == NoiseModel::Adjacent {
            for d in 1..table.len() {
                let near = [latent.checked_sub(d), Some(latent + d).filter(|&l| l < table.len())];
                for l in near.into_iter().flatten() {
                    if let Some(o) = table[l].filter(|&o| o != c) {
                        return o;
                    }
                }
            }
        }
        let r = rng.gen_range(0..classes as u16 - 1);
        if r >= c {
            r + 1
        } else {
            r
        }
    }

    /// Ground-truth labels of an original dataset's image.
    pub fn ground_truth(&self, dataset: &str, image: usize) -> Result<LabelRaster> {
        let d = self.dataset_index(dataset)?;
        let node = self.node(dataset)?;
        let labels = self.latents[d][image]
            .iter()
            .map(|&l| node.truth[l as usize].unwrap_or(VOID))
            .collect();
        self.raster(dataset, labels)
    }

    /// Hard prediction of `model`'s network on an image of `dataset`.
    pub fn prediction(&self, model: &str, dataset: &str, image: usize) -> Result<LabelRaster> {
        let d = self.dataset_index(dataset)?;
        let node = self.node(model)?;
        self.raster(model, self.predict(node, &node.foreign, Purpose::Foreign, d, image))
    }

    fn raster(&self, id: &str, labels: Vec<u16>) -> Result<LabelRaster> {
        LabelRaster::new(id, self.world.width, self.world.height, labels)
    }

    fn predict(&self, node: &NodeLabels, table: &[Option<u16>], purpose: Purpose, d: usize, image: usize) -> Vec<u16> {
        let mut rng = stream(self.world.seed, d, image, purpose, fnv1a(&node.id));
        let classes = node.taxonomy.len();
        self.latents[d][image]
            .iter()
            .map(|&l| self.noisy(table, classes, l as usize, &mut rng))
            .collect()
    }

    /// Row labels of a node on its own images: annotations for datasets,
    /// the node's own predictions for merged nodes.
    fn rows(&self, node: &NodeLabels, d: usize, image: usize) -> Vec<u16> {
        if node.members.len() == 1 {
            self.latents[d][image]
                .iter()
                .map(|&l| node.truth[l as usize].unwrap_or(VOID))
                .collect()
        } else {
            self.predict(node, &node.foreign, Purpose::Intra, d, image)
        }
    }

    /// Top-K posterior of the concatenation model over `space` on an image
    /// of `native`.
    pub fn posterior(&self, space: &ConcatSpace, native: &str, d: usize, image: usize) -> Result<PosteriorDump> {
        let side = space.side(native).ok_or_else(|| Error::TaxonomyMismatch {
            expected: space.id(),
            found: native.to_owned(),
        })?;
        let n = self.node(native)?;
        let o = self.node(&space.taxonomy(side.other()).dataset_id)?;
        let (n_off, o_off) = (space.offset(side), space.offset(side.other()));
        let total = space.len();
        let k = self.world.top_k as usize;
        let eps = self.world.noise;
        let alpha = self.world.native_share;
        let mut rng = stream(self.world.seed, d, image, Purpose::Posterior, fnv1a(&space.id()));
        let pixels: Vec<Vec<(u16, f32)>> = self.latents[d][image]
            .iter()
            .map(|&l| {
                let own = n.truth[l as usize].map(|c| (n_off + c as usize) as u16);
                let other = o.truth[l as usize].map(|c| (o_off + c as usize) as u16);
                let mut px: Vec<(u16, f32)> = match (own, other) {
                    (Some(a), Some(b)) => vec![(a, (alpha * (1.0 - eps)) as f32), (b, ((1.0 - alpha) * (1.0 - eps)) as f32)],
                    (Some(a), None) | (None, Some(a)) => vec![(a, (1.0 - eps) as f32)],
                    (None, None) => Vec::new(),
                };
                let rest = if px.is_empty() { 1.0 } else { eps };
                let m = k.saturating_sub(px.len()).min(total - px.len());
                if rest > 0.0 && m > 0 {
                    let share = (rest / m as f64) as f32;
                    let extra: Vec<u16> = index::sample(&mut rng, total, (m + px.len()).min(total))
                        .into_iter()
                        .map(|c| c as u16)
                        .filter(|c| !px.iter().any(|(u, _)| u == c))
                        .take(m)
                        .collect();
                    px.extend(extra.into_iter().map(|c| (c, share)));
                }
                px
            })
            .collect();
        PosteriorDump::from_pixels(space.id(), self.world.width, self.world.height, self.world.top_k, total, pixels)
    }

    /// Every (dataset, image) pair belonging to a node.
    pub fn node_images(&self, id: &str) -> Result<Vec<(usize, usize)>> {
        let node = self.node(id)?;
        Ok(node
            .members
            .iter()
            .flat_map(|&d| (0..self.images).map(move |i| (d, i)))
            .collect())
    }

    /// Counts of row labels of `rows` against predictions of `cols`'s model
    /// on the images of `rows`.
    pub fn matrix(&self, rows: &str, cols: &str) -> Result<CooccurrenceMatrix> {
        let (r, c) = (self.node(rows)?, self.node(cols)?);
        let (nr, nc) = (r.taxonomy.len(), c.taxonomy.len());
        let counts = self
            .node_images(rows)?
            .into_par_iter()
            .fold(
                || vec![0u64; nr * nc],
                |mut acc, (d, i)| {
                    let row = self.rows(r, d, i);
                    let col = self.predict(c, &c.foreign, Purpose::Foreign, d, i);
                    for (&a, &b) in row.iter().zip(&col) {
                        if a != VOID && b != VOID {
                            acc[a as usize * nc + b as usize] += 1;
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u64; nr * nc],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        CooccurrenceMatrix::from_counts(
            r.id.clone(),
            c.id.clone(),
            r.taxonomy.classes.clone(),
            c.taxonomy.classes.clone(),
            counts,
        )
    }

    /// Evaluation records of both nodes over their concatenated space.
    pub fn eval_data(&self, a: &str, b: &str) -> Result<EvalData> {
        let space = ConcatSpace::new(self.node(a)?.taxonomy.clone(), self.node(b)?.taxonomy.clone())?;
        let mut records = BTreeMap::new();
        for id in [a, b] {
            let node = self.node(id)?;
            let mut images = self.node_images(id)?;
            if let Some(cap) = self.eval_images {
                images = spread(images, cap);
            }
            let recs = images
                .into_par_iter()
                .map(|(d, i)| {
                    Ok(EvalRecord {
                        gt: self.raster(id, self.rows(node, d, i))?,
                        posterior: self.posterior(&space, id, d, i)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            records.insert(id.to_owned(), recs);
        }
        EvalData::new(space, records)
    }

    pub fn evidence_for(&self, a: &str, b: &str) -> Result<Evidence> {
        Ok(Evidence {
            m_ab: self.matrix(a, b)?,
            m_ba: self.matrix(b, a)?,
            eval: self.eval_data(a, b)?,
        })
    }

    /// Runs a merge schedule over the world's datasets.
    pub fn reconcile(&mut self, schedule: &MergeSchedule, opts: GraphOptions) -> Result<MergeNode> {
        let leaves = self.leaves();
        run_schedule(schedule, &leaves, self, opts)
    }
}

impl EvidenceSource for Simulation {
    fn evidence(&mut self, a: &MergeNode, b: &MergeNode) -> Result<Evidence> {
        self.evidence_for(a.id(), b.id())
    }

    fn on_merged(&mut self, meta: &MetaDataset) -> Result<()> {
        self.register(meta)
    }
}

/// `cap` items evenly spaced through `items`, so every member dataset is
/// represented.
fn spread<T: Copy>(items: Vec<T>, cap: usize) -> Vec<T> {
    if cap == 0 || items.len() <= cap {
        return items;
    }
    (0..cap).map(|j| items[j * items.len() / cap]).collect()
}

fn stream(seed: u64, dataset: usize, image: usize, purpose: Purpose, node: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = [dataset as u64, image as u64, purpose as u64, node]
        .into_iter()
        .fold(0u64, |h, x| splitmix64(h ^ x));
    rng.set_stream(key);
    rng
}
