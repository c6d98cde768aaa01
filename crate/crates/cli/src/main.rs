use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use unitax_core::graph::{build_graph, classify, BipartiteGraph, GraphOptions};
use unitax_core::ingest::{load_posterior_dump, load_raster, CooccurrenceMatrix, LabelRaster};
use unitax_core::merge::{flatten, merges, MergeNode, MergeSchedule};
use unitax_core::resolve::{miou_of_labels, resolve, ConcatSpace, CountingEvaluator, EvalData, EvalRecord, RelationSet};
use unitax_core::synth::{recovery_score, sample_world, GroupingLaw, LatentWorld, NoiseModel, Simulation};
use unitax_core::universal::{build_universal, map_prediction};
use unitax_core::{partial_label_matrices, Taxonomy, UniversalTaxonomy};

/// Builds universal taxonomies from multi-dataset segmentation evidence.
#[derive(Parser)]
#[command(name = "unitax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count ground truth against foreign predictions.
    Cooccur(AccumulateArgs),
    /// Count intra-domain predictions against foreign predictions.
    Coincide(AccumulateArgs),
    /// Build the mcfp graph from two matrices and classify its edges.
    Hypothesize(HypothesizeArgs),
    /// Settle conflict pairs by mIoU tournament.
    Resolve(ResolveArgs),
    /// Assemble the universal taxonomy from a conflict-free graph.
    Build(BuildArgs),
    /// Merge every dataset of a simulated fixture along a schedule.
    Merge(MergeArgs),
    /// mIoU of hard predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a synthetic fixture directory.
    Simulate(SimulateArgs),
    /// Render a graph as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Args)]
struct AccumulateArgs {
    /// Taxonomy JSON of the row (ground-truth or intra) side.
    #[arg(long)]
    rows: PathBuf,
    /// Taxonomy JSON of the foreign model.
    #[arg(long)]
    cols: PathBuf,
    /// Directory of row-side label rasters.
    #[arg(long)]
    labels: PathBuf,
    /// Directory of foreign predictions, matched by file name.
    #[arg(long)]
    pred: PathBuf,
    /// Only use the first N images (sorted by name).
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HypothesizeArgs {
    /// Matrix with dataset A's labels as rows.
    #[arg(long)]
    ab: PathBuf,
    /// Matrix with dataset B's labels as rows.
    #[arg(long)]
    ba: PathBuf,
    /// Drop edges below this fraction of their row total.
    #[arg(long, default_value_t = 0.0)]
    min_support: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResolveArgs {
    #[arg(long)]
    graph: PathBuf,
    /// `dataset=DIR` of ground-truth rasters, once per dataset.
    #[arg(long = "gt", value_parser = parse_binding, required = true)]
    gt: Vec<(String, PathBuf)>,
    /// `dataset=DIR` of concatenated-space posterior dumps, once per dataset.
    #[arg(long = "posteriors", value_parser = parse_binding, required = true)]
    posteriors: Vec<(String, PathBuf)>,
    #[arg(long)]
    max_images: Option<usize>,
    /// Output directory for the resolved graph and the log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Output directory for the universal taxonomy and label matrices.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    /// Fixture directory written by `simulate`.
    #[arg(long)]
    fixture: PathBuf,
    /// Nested JSON arrays of dataset ids; a left-to-right bracket by default.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Images per side used for tournament evaluation.
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    min_support: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Taxonomy of the ground truth.
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Predictions are universal classes; map them through this taxonomy.
    #[arg(long)]
    universal: Option<PathBuf>,
    #[arg(long)]
    max_images: Option<usize>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Start from an existing world file instead of sampling one.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    latent: usize,
    #[arg(long, default_value_t = 2)]
    datasets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    adjacent_noise: bool,
    /// Images per dataset.
    #[arg(long, default_value_t = 16)]
    images: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    size: u32,
    #[arg(long, default_value_t = 8)]
    top_k: u16,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportDotArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_binding(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected dataset=DIR, got `{s}`"))?;
    Ok((k.to_owned(), PathBuf::from(v)))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    Ok(Taxonomy::from_json(&read(path)?)?)
}

fn load_graph(path: &Path) -> Result<BipartiteGraph> {
    Ok(BipartiteGraph::from_json(&read(path)?)?)
}

fn check_cap(cap: Option<usize>) -> Result<()> {
    ensure!(cap != Some(0), "--max-images must be at least 1");
    Ok(())
}

/// Sorted files of `dir`, capped.
fn listing(dir: &Path, cap: Option<usize>) -> Result<Vec<PathBuf>> {
    check_cap(cap)?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    if let Some(cap) = cap {
        files.truncate(cap);
    }
    ensure!(!files.is_empty(), "{} has no files", dir.display());
    Ok(files)
}

/// The file in `dir` with the same stem as `file`.
fn partner(file: &Path, dir: &Path, ext: Option<&str>) -> Result<PathBuf> {
    let name = match ext {
        Some(ext) => file.with_extension(ext),
        None => file.to_path_buf(),
    };
    let p = dir.join(name.file_name().unwrap());
    ensure!(p.is_file(), "missing {} to pair with {}", p.display(), file.display());
    Ok(p)
}

fn cmd_accumulate(args: AccumulateArgs, coincidence: bool) -> Result<()> {
    let (rows, cols) = (load_taxonomy(&args.rows)?, load_taxonomy(&args.cols)?);
    let files = listing(&args.labels, args.max_images)?;
    let pairs: Vec<(PathBuf, PathBuf)> = files
        .iter()
        .map(|f| Ok((f.clone(), partner(f, &args.pred, None)?)))
        .collect::<Result<_>>()?;
    let empty = CooccurrenceMatrix::new(&rows, &cols)?;
    let m = empty.par_accumulate(pairs.len(), |i| {
        let (l, p) = &pairs[i];
        Ok((load_raster(l, &rows)?, load_raster(p, &cols)?))
    })?;
    write(&args.out, m.to_csv())?;
    let kind = if coincidence { "coincidence" } else { "co-occurrence" };
    println!(
        "{kind} {} x {}: {} images, {} pixels -> {}",
        rows.dataset_id,
        cols.dataset_id,
        pairs.len(),
        m.pixel_total(),
        args.out.display()
    );
    Ok(())
}

fn summarize(g: &BipartiteGraph) {
    let c = classify(g);
    println!(
        "{} + {} classes, {} edges: {} overlaps, {} subsets, {} conflict pairs",
        g.taxonomy_a.len(),
        g.taxonomy_b.len(),
        g.edge_count(),
        c.overlaps.len(),
        c.subsets.len(),
        c.conflicts.len()
    );
    for p in &c.conflicts {
        println!("  conflict {} vs {}", p.hypothesis_a, p.hypothesis_b);
    }
}

fn cmd_hypothesize(args: HypothesizeArgs) -> Result<()> {
    let m_ab = CooccurrenceMatrix::from_csv(&read(&args.ab)?)?;
    let m_ba = CooccurrenceMatrix::from_csv(&read(&args.ba)?)?;
    let g = build_graph(&m_ab, &m_ba, GraphOptions { min_support: args.min_support })?;
    write(&args.out, g.to_json())?;
    summarize(&g);
    Ok(())
}

fn eval_records(
    space: &ConcatSpace,
    dataset: &str,
    gt_dir: &Path,
    post_dir: &Path,
    cap: Option<usize>,
) -> Result<Vec<EvalRecord>> {
    let side = space.side(dataset).with_context(|| format!("`{dataset}` is not in {}", space.id()))?;
    let taxonomy = space.taxonomy(side);
    listing(gt_dir, cap)?
        .iter()
        .map(|f| {
            Ok(EvalRecord {
                gt: load_raster(f, taxonomy)?,
                posterior: load_posterior_dump(partner(f, post_dir, Some("segp"))?, &space.id(), space.len())?,
            })
        })
        .collect()
}

fn cmd_resolve(args: ResolveArgs) -> Result<()> {
    let g = load_graph(&args.graph)?;
    let space = ConcatSpace::new(g.taxonomy_a.clone(), g.taxonomy_b.clone())?;
    let mut records = std::collections::BTreeMap::new();
    for (dataset, gt_dir) in &args.gt {
        let post = args
            .posteriors
            .iter()
            .find(|(d, _)| d == dataset)
            .with_context(|| format!("no --posteriors for `{dataset}`"))?;
        records.insert(dataset.clone(), eval_records(&space, dataset, gt_dir, &post.1, args.max_images)?);
    }
    let eval = EvalData::new(space, records)?;
    let datasets = eval.datasets();
    let c = classify(&g);
    let base: RelationSet = c.base_relations().into_iter().collect();
    let mut evaluator = CountingEvaluator::new(eval);
    let r = resolve(&c.conflicts, &base, &datasets, &mut evaluator)?;
    let resolved = g.without_hypotheses(&r.rejected)?;
    fs::create_dir_all(&args.out)?;
    write(&args.out.join("graph.json"), resolved.to_json())?;
    write(&args.out.join("resolution.jsonl"), r.log_jsonl())?;
    for rec in &r.log {
        let removed = rec.removed.as_ref().map_or("none".into(), |h| h.to_string());
        println!(
            "  #{} {:?}: mean mIoU {:.4} vs {:.4}, removed {removed}",
            rec.order, rec.outcome, rec.mean_a, rec.mean_b
        );
    }
    println!(
        "evaluations: {} (2 * {} conflicts * {} datasets)",
        evaluator.calls,
        c.conflicts.len(),
        datasets.len()
    );
    summarize(&resolved);
    Ok(())
}

fn write_universal(dir: &Path, u: &UniversalTaxonomy, taxonomies: &[&Taxonomy]) -> Result<()> {
    write(&dir.join("universal.json"), u.to_json())?;
    for m in partial_label_matrices(u)? {
        let Some(t) = taxonomies.iter().find(|t| t.dataset_id == m.dataset_id) else {
            continue;
        };
        write(&dir.join(format!("partial_{}.csv", m.dataset_id)), m.to_csv(t, u)?)?;
    }
    Ok(())
}

fn cmd_build(args: BuildArgs) -> Result<()> {
    let g = load_graph(&args.graph)?;
    let u = build_universal(&g)?;
    write_universal(&args.out, &u, &[&g.taxonomy_a, &g.taxonomy_b])?;
    println!(
        "{} universal classes from {} + {} -> {}",
        u.len(),
        g.taxonomy_a.len(),
        g.taxonomy_b.len(),
        args.out.join("universal.json").display()
    );
    for c in &u.universal_classes {
        println!("  {}", c.name);
    }
    Ok(())
}

fn load_fixture(dir: &Path) -> Result<(LatentWorld, usize)> {
    let world = LatentWorld::from_json(&read(&dir.join("world.json"))?)?;
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.join("fixture.json"))?)?;
    let images = meta["images"].as_u64().context("fixture.json lacks `images`")? as usize;
    Ok((world, images))
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    check_cap(args.max_images)?;
    let (world, images) = load_fixture(&args.fixture)?;
    let schedule = match &args.schedule {
        Some(p) => MergeSchedule::from_json(&read(p)?)?,
        None => MergeSchedule::default_for(&world.dataset_ids())?,
    };
    let mut sim = Simulation::new(world.clone(), images)?.with_eval_images(args.max_images);
    let root = sim.reconcile(&schedule, GraphOptions { min_support: args.min_support })?;
    let mut total = 0;
    for m in merges(&root) {
        let dir = args.out.join("merges").join(&m.id);
        write(&dir.join("graph.json"), m.graph.to_json())?;
        write(&dir.join("resolution.jsonl"), m.resolution.log_jsonl())?;
        write(&dir.join("universal.json"), m.universal.to_json())?;
        total += m.evaluator_calls;
        println!(
            "{}: {} + {} -> {} classes, {} conflicts, {} evaluations",
            m.id,
            m.left.taxonomy().len(),
            m.right.taxonomy().len(),
            m.universal.len(),
            m.classification.conflicts.len(),
            m.evaluator_calls
        );
    }
    let u = flatten(&root)?;
    let leaves: Vec<Taxonomy> = world.taxonomies();
    write_universal(&args.out, &u, &leaves.iter().collect::<Vec<_>>())?;
    let recovery = recovery_score(&u, &world)?;
    println!(
        "{}: {} universal classes, {total} evaluations, recovery {recovery:.4}",
        match &root {
            MergeNode::Leaf(t) => t.dataset_id.clone(),
            MergeNode::Meta(m) => m.id.clone(),
        },
        u.len()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let universal = match &args.universal {
        Some(p) => Some(UniversalTaxonomy::from_json(&read(p)?)?),
        None => None,
    };
    let pred_taxonomy = match &universal {
        Some(u) => u.as_taxonomy("universal"),
        None => taxonomy.clone(),
    };
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for f in listing(&args.gt, args.max_images)? {
        let gt = load_raster(&f, &taxonomy)?;
        let mut pred = load_raster(partner(&f, &args.pred, None)?, &pred_taxonomy)?;
        if let Some(u) = &universal {
            pred = map_prediction(&pred, u, &taxonomy.dataset_id)?;
            pred.taxonomy_id = taxonomy.dataset_id.clone();
        }
        ensure!(gt.same_shape(&pred), "{}: prediction shape differs", f.display());
        gts.extend(gt.labels);
        preds.extend(pred.labels);
    }
    let n = gts.len() as u32;
    let gt = LabelRaster::new(taxonomy.dataset_id.clone(), n, 1, gts)?;
    let pred = LabelRaster::new(taxonomy.dataset_id.clone(), n, 1, preds)?;
    let report = miou_of_labels(&gt, &pred, taxonomy.len())?;
    println!("{:<24} {:>8}", "class", "IoU");
    for (c, iou) in report.per_class.iter().enumerate() {
        let v = iou.map_or("-".into(), |v| format!("{v:.3}"));
        println!("{:<24} {v:>8}", taxonomy.classes[c]);
    }
    println!("mIoU {:.3}", report.miou);
    if let Some(out) = &args.out {
        let body = json!({
            "dataset": taxonomy.dataset_id,
            "miou": report.miou,
            "classes": taxonomy.classes,
            "per_class": report.per_class,
            "intersections": report.intersections,
            "unions": report.unions,
        });
        write(out, serde_json::to_string_pretty(&body)? + "\n")?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut world = match &args.world {
        Some(p) => LatentWorld::from_json(&read(p)?)?,
        None => {
            let mut w = sample_world(args.latent, args.datasets, &GroupingLaw::mixed(), args.seed)?;
            w.noise = args.noise;
            if args.adjacent_noise {
                w.noise_model = NoiseModel::Adjacent;
            }
            w.width = args.size;
            w.height = args.size;
            w
        }
    };
    world.top_k = args.top_k;
    world.validate()?;
    let sim = Simulation::new(world.clone(), args.images)?;
    let out = &args.out;
    write(&out.join("world.json"), world.to_json())?;
    write(&out.join("fixture.json"), json!({ "images": args.images }).to_string() + "\n")?;
    let taxonomies = world.taxonomies();
    for t in &taxonomies {
        write(&out.join("taxonomies").join(format!("{}.json", t.dataset_id)), t.to_json())?;
    }
    let file = |i: usize, ext: &str| format!("{i:05}.{ext}");
    for (x, tx) in taxonomies.iter().enumerate() {
        let id = &tx.dataset_id;
        for i in 0..args.images {
            sim.ground_truth(id, i)?
                .save(ensure_dir(out.join("gt").join(id))?.join(file(i, "segr")), tx)?;
        }
        for (y, ty) in taxonomies.iter().enumerate() {
            if x == y {
                continue;
            }
            let dir = ensure_dir(out.join("pred").join(format!("{}_on_{id}", ty.dataset_id)))?;
            for i in 0..args.images {
                sim.prediction(&ty.dataset_id, id, i)?.save(dir.join(file(i, "segr")), ty)?;
            }
            if x < y {
                let space = ConcatSpace::new(tx.clone(), ty.clone())?;
                for (d, side) in [(x, tx), (y, ty)] {
                    let dir = ensure_dir(out.join("post").join(format!("{id}_{}", ty.dataset_id)).join(&side.dataset_id))?;
                    for i in 0..args.images {
                        sim.posterior(&space, &side.dataset_id, d, i)?.save(dir.join(file(i, "segp")))?;
                    }
                }
            }
        }
    }
    println!(
        "{} datasets, {} latent concepts, {} images of {}x{} each -> {}",
        taxonomies.len(),
        world.num_latent(),
        args.images,
        world.width,
        world.height,
        out.display()
    );
    Ok(())
}

fn ensure_dir(dir: PathBuf) -> Result<PathBuf> {
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_export_dot(args: ExportDotArgs) -> Result<()> {
    let dot = load_graph(&args.graph)?.to_dot();
    match &args.out {
        Some(p) => write(p, dot),
        None => {
            print!("{dot}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cooccur(a) => cmd_accumulate(a, false),
        Command::Coincide(a) => cmd_accumulate(a, true),
        Command::Hypothesize(a) => cmd_hypothesize(a),
        Command::Resolve(a) => cmd_resolve(a),
        Command::Build(a) => cmd_build(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ExportDot(a) => cmd_export_dot(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<unitax_core::Error>()
                .map_or("other", |_| "pipeline");
            let msg = match e.downcast_ref::<unitax_core::Error>() {
                Some(core) => core.to_string(),
                None => format!("{e:#}"),
            };
            eprintln!("{}", json!({ "error": msg, "kind": kind }));
            ExitCode::FAILURE
        }
    }
}
