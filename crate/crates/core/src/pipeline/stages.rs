use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, MaskMode, Settings};
use super::manifest::{split_dataset, Manifest, ManifestError, ManifestRecord, Split};
use crate::annindex::{AnnIndex, IndexError};
use crate::collage::{compose, layout, CollageError, CollageItem, CollageSpec, SLOT_COUNT};
use crate::descriptor::{
    patch_descriptor, read_descriptors, write_descriptors, DescriptorError, DescriptorRecord,
};
use crate::embedder::{read_model, train, write_model, EmbedError, LabeledSet, PatchDescriptor};
use crate::geometry::{
    clean_proposals, read_proposals, write_proposals, BoundingBox, GeometryError, Proposal,
};
use crate::metrics::{evaluate, Mask, MetricsError};
use crate::pnm::{read_image, read_mask, write_ppm, PnmError, RgbImage};
use crate::retrieval::{
    annotate_classes, embed_all, filter_candidates, read_groups, retrieve_similar, write_groups,
    RetrievalError, SimilarityGroup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Train,
    Embed,
    Index,
    Retrieve,
    Evaluate,
    Collage,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Embed,
        Stage::Index,
        Stage::Retrieve,
        Stage::Evaluate,
        Stage::Collage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::Evaluate => "evaluate",
            Stage::Collage => "collage",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("proposals: {0}")]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Collage(#[from] CollageError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("image of item `{item}`: {source}")]
    Image { item: String, source: PnmError },
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Stage { stage: Stage, source: StageError },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

/// File names of every artifact inside the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn descriptors(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{split}.csgd"))
    }

    /// Kept proposals, line `i` belonging to descriptor record `i`.
    pub fn proposals(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{split}_proposals.txt"))
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.csgm")
    }

    pub fn loss_trace(&self) -> PathBuf {
        self.dir.join("train_loss.csv")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.dir.join("test_embeddings.csgd")
    }

    pub fn index(&self) -> PathBuf {
        self.dir.join("index.csgi")
    }

    pub fn groups(&self) -> PathBuf {
        self.dir.join("groups.jsonl")
    }

    pub fn filtered_groups(&self) -> PathBuf {
        self.dir.join("groups_filtered.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    /// Characters outside `[A-Za-z0-9_-]` in the class name become `_`.
    pub fn collage(&self, class: &str) -> PathBuf {
        let safe: String = class
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("collage_{safe}.ppm"))
    }
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> StageError + '_ {
    move |source| StageError::File {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, StageError> {
    File::open(path).map(BufReader::new).map_err(file_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, StageError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(file_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub patch_size: u32,
    pub dedup_threshold: f64,
    pub nms_threshold: f64,
    pub top_k: usize,
}

impl From<&Settings> for IngestOptions {
    fn from(s: &Settings) -> Self {
        Self {
            patch_size: s.patch_size,
            dedup_threshold: s.dedup_threshold,
            nms_threshold: s.nms_threshold,
            top_k: s.top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedProposal {
    /// `<item_id>__p<rank>`, rank being the position among the image's kept
    /// proposals.
    pub id: String,
    pub class: String,
    pub split: Split,
    /// Clipped to the image.
    pub proposal: Proposal,
    pub descriptor: PatchDescriptor,
}

/// Per image: near-duplicate rejection, NMS, top-k, then one descriptor per
/// surviving proposal. Output follows record order, then proposal rank.
pub fn ingest(
    records: &[ManifestRecord],
    proposals: &[Proposal],
    opts: &IngestOptions,
) -> Result<Vec<IngestedProposal>, StageError> {
    if proposals.is_empty() {
        warn!("no proposals given; the dataset is empty");
    }
    let mut by_image: HashMap<&str, Vec<Proposal>> = HashMap::new();
    for p in proposals {
        by_image
            .entry(p.image_id.as_str())
            .or_default()
            .push(p.clone());
    }
    let orphans = by_image
        .keys()
        .filter(|id| !records.iter().any(|r| r.item_id == **id))
        .count();
    if orphans > 0 {
        warn!("{orphans} image id(s) in the proposal file are not in the manifest; ignored");
    }
    let per_record: Vec<Vec<IngestedProposal>> = records
        .par_iter()
        .map(|r| -> Result<Vec<IngestedProposal>, StageError> {
            let Some(props) = by_image.get(r.item_id.as_str()) else {
                return Ok(Vec::new());
            };
            let kept =
                clean_proposals(props, opts.dedup_threshold, opts.nms_threshold, opts.top_k)?;
            let img = read_image(&r.image_path).map_err(|source| StageError::Image {
                item: r.item_id.clone(),
                source,
            })?;
            let mut out = Vec::with_capacity(kept.len());
            for p in kept {
                let Some(bbox) = p.bbox.clip_to(img.width(), img.height()) else {
                    warn!(
                        "{}: proposal {:?} lies outside the image; skipped",
                        r.item_id, p.bbox
                    );
                    continue;
                };
                let descriptor = patch_descriptor(&img, &bbox, opts.patch_size)
                    .expect("box is inside the image");
                out.push(IngestedProposal {
                    id: format!("{}__p{:02}", r.item_id, out.len()),
                    class: r.class.clone(),
                    split: r.split,
                    proposal: Proposal::new(p.image_id.clone(), bbox, p.score(), p.source.clone())?,
                    descriptor,
                });
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

/// Manifest records with the configured split applied, in manifest order.
pub fn load_records(settings: &Settings) -> Result<Vec<ManifestRecord>, StageError> {
    let manifest = Manifest::read(&settings.manifest)?;
    let Some(fraction) = settings.train_fraction else {
        return Ok(manifest.records().to_vec());
    };
    let (train, test) = split_dataset(&manifest, fraction, settings.seed)?;
    let split: HashMap<String, Split> = train
        .iter()
        .chain(&test)
        .map(|r| (r.item_id.clone(), r.split))
        .collect();
    Ok(manifest
        .records()
        .iter()
        .map(|r| ManifestRecord {
            split: split[&r.item_id],
            ..r.clone()
        })
        .collect())
}

struct Context<'a> {
    settings: &'a Settings,
    records: Vec<ManifestRecord>,
    by_id: HashMap<String, usize>,
    out: Artifacts,
}

impl<'a> Context<'a> {
    fn new(settings: &'a Settings) -> Result<Self, StageError> {
        let records = load_records(settings)?;
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.item_id.clone(), i))
            .collect();
        fs::create_dir_all(&settings.out_dir).map_err(file_err(&settings.out_dir))?;
        Ok(Self {
            settings,
            records,
            by_id,
            out: Artifacts::new(&settings.out_dir),
        })
    }

    fn record(&self, image_id: &str) -> Result<&ManifestRecord, StageError> {
        self.by_id
            .get(image_id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| StageError::Input(format!("image `{image_id}` is not in the manifest")))
    }

    fn read_proposals(&self, split: Split) -> Result<Vec<Proposal>, StageError> {
        Ok(read_proposals(open(&self.out.proposals(split))?)?)
    }

    fn read_descriptors(&self, path: &Path) -> Result<(usize, Vec<DescriptorRecord>), StageError> {
        Ok(read_descriptors(open(path)?)?)
    }

    fn read_groups(&self, path: &Path) -> Result<Vec<SimilarityGroup>, StageError> {
        Ok(read_groups(open(path)?)?)
    }

    /// Mask of one proposal, sized like its box.
    fn proposal_mask(&self, id: &str, bbox: &BoundingBox) -> Result<Mask, StageError> {
        match self.settings.mask_mode {
            MaskMode::Box => Ok(Mask::filled(bbox.width(), bbox.height(), true)?),
            MaskMode::File => {
                let dir = self.settings.masks_dir.as_deref().unwrap_or(Path::new("."));
                let m = read_mask(&dir.join(format!("{id}.pbm")))?;
                if (m.width(), m.height()) != (bbox.width(), bbox.height()) {
                    return Err(StageError::Input(format!(
                        "mask of `{id}` is {}x{}, its box is {}x{}",
                        m.width(),
                        m.height(),
                        bbox.width(),
                        bbox.height()
                    )));
                }
                Ok(m)
            }
        }
    }
}

fn stage_ingest(ctx: &Context) -> Result<(), StageError> {
    let path = ctx
        .settings
        .proposals
        .as_deref()
        .ok_or(StageError::Config(ConfigError::Missing("proposals")))?;
    let proposals = read_proposals(open(path)?)?;
    let data = ingest(&ctx.records, &proposals, &IngestOptions::from(ctx.settings))?;
    let dim = (ctx.settings.patch_size * ctx.settings.patch_size) as usize;
    for split in [Split::Train, Split::Test] {
        let part: Vec<&IngestedProposal> = data.iter().filter(|d| d.split == split).collect();
        let records: Vec<DescriptorRecord> = part
            .iter()
            .map(|d| DescriptorRecord::from_f64(d.id.clone(), d.descriptor.as_slice()))
            .collect();
        let props: Vec<Proposal> = part.iter().map(|d| d.proposal.clone()).collect();
        write_descriptors(create(&ctx.out.descriptors(split))?, dim, &records)?;
        let mut w = create(&ctx.out.proposals(split))?;
        write_proposals(&mut w, &props)?;
        w.flush().map_err(file_err(&ctx.out.proposals(split)))?;
        info!("ingest: {} {split} descriptors", records.len());
    }
    Ok(())
}

fn stage_train(ctx: &Context) -> Result<(), StageError> {
    let (_, records) = ctx.read_descriptors(&ctx.out.descriptors(Split::Train))?;
    let props = ctx.read_proposals(Split::Train)?;
    if props.len() != records.len() {
        return Err(StageError::Input(format!(
            "{} training descriptors but {} training proposals",
            records.len(),
            props.len()
        )));
    }
    let classes: Vec<String> = {
        let mut c: Vec<String> = ctx.records.iter().map(|r| r.class.clone()).collect();
        c.sort();
        c.dedup();
        c
    };
    let mut labels = Vec::with_capacity(props.len());
    for p in &props {
        let class = &ctx.record(&p.image_id)?.class;
        labels.push(
            classes
                .binary_search(class)
                .expect("class list built from the manifest") as u32,
        );
    }
    let descriptors = records
        .iter()
        .map(|r| PatchDescriptor::new(r.to_f64()))
        .collect::<Result<Vec<_>, _>>()?;
    let set = LabeledSet::new(descriptors, labels)?;
    let outcome = train(&set, &ctx.settings.train)?;
    let mut w = create(&ctx.out.model())?;
    write_model(&mut w, &outcome.params)?;
    w.flush().map_err(file_err(&ctx.out.model()))?;
    let mut trace = String::from("iteration,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        trace.push_str(&format!("{i},{l}\n"));
    }
    fs::write(ctx.out.loss_trace(), trace).map_err(file_err(&ctx.out.loss_trace()))?;
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        info!(
            "train: {} iterations, loss {first:.4} -> {last:.4}",
            outcome.losses.len()
        );
    }
    Ok(())
}

fn stage_embed(ctx: &Context) -> Result<(), StageError> {
    let params = read_model(open(&ctx.out.model())?)?;
    let (_, records) = ctx.read_descriptors(&ctx.out.descriptors(Split::Test))?;
    let inputs: Vec<Vec<f64>> = records.iter().map(DescriptorRecord::to_f64).collect();
    let embeddings = embed_all(&params, &inputs)?;
    let out: Vec<DescriptorRecord> = records
        .iter()
        .zip(&embeddings)
        .map(|(r, e)| DescriptorRecord::from_f64(r.id.clone(), e))
        .collect();
    write_descriptors(create(&ctx.out.embeddings())?, params.output_dim(), &out)?;
    info!("embed: {} test embeddings", out.len());
    Ok(())
}

fn stage_index(ctx: &Context) -> Result<(), StageError> {
    let (_, records) = ctx.read_descriptors(&ctx.out.embeddings())?;
    let items: Vec<Vec<f64>> = records.iter().map(DescriptorRecord::to_f64).collect();
    let index = AnnIndex::build(&items, &ctx.settings.index)?;
    let mut w = create(&ctx.out.index())?;
    index.save(&mut w)?;
    w.flush().map_err(file_err(&ctx.out.index()))?;
    info!("index: {} items, {} trees", index.len(), index.n_trees());
    Ok(())
}

fn test_gt_boxes(ctx: &Context) -> HashMap<String, BoundingBox> {
    ctx.records
        .iter()
        .filter(|r| r.split == Split::Test)
        .filter_map(|r| r.gt_box.map(|b| (r.item_id.clone(), b)))
        .collect()
}

fn stage_retrieve(ctx: &Context) -> Result<(), StageError> {
    let index = AnnIndex::load(open(&ctx.out.index())?)?;
    let props = ctx.read_proposals(Split::Test)?;
    if props.len() != index.len() {
        return Err(StageError::Input(format!(
            "index holds {} items but there are {} test proposals",
            index.len(),
            props.len()
        )));
    }
    let classes = props
        .iter()
        .map(|p| ctx.record(&p.image_id).map(|r| r.class.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut groups = retrieve_similar(
        &index,
        ctx.settings.retrieve_k,
        ctx.settings.retrieve_search_k,
    )?;
    annotate_classes(&mut groups, &classes);
    write_groups(create(&ctx.out.groups())?, &groups)?;
    let gt = test_gt_boxes(ctx);
    let filtered_path = ctx.out.filtered_groups();
    if gt.is_empty() {
        if filtered_path.exists() {
            fs::remove_file(&filtered_path).map_err(file_err(&filtered_path))?;
        }
    } else {
        let filtered = groups
            .iter()
            .map(|g| filter_candidates(g, &props, &gt, ctx.settings.iou_threshold))
            .collect::<Result<Vec<_>, _>>()?;
        write_groups(create(&filtered_path)?, &filtered)?;
    }
    info!("retrieve: {} groups", groups.len());
    Ok(())
}

/// For each image, the proposal whose neighbours from other images are
/// closest on average (ties: lowest id). Proposals without such neighbours
/// are only chosen when nothing better exists. Returns image id -> proposal
/// id and that mean distance.
pub fn representatives(
    groups: &[SimilarityGroup],
    proposals: &[Proposal],
) -> BTreeMap<String, (usize, f64)> {
    let mut best: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut sorted: Vec<&SimilarityGroup> = groups.iter().collect();
    sorted.sort_by_key(|g| g.anchor);
    for g in sorted {
        let Some(anchor) = proposals.get(g.anchor) else {
            continue;
        };
        let others: Vec<f64> = g
            .members
            .iter()
            .filter(|m| {
                proposals
                    .get(m.id)
                    .is_some_and(|p| p.image_id != anchor.image_id)
            })
            .map(|m| m.distance)
            .collect();
        let score = if others.is_empty() {
            f64::INFINITY
        } else {
            others.iter().sum::<f64>() / others.len() as f64
        };
        match best.get(&anchor.image_id) {
            Some(&(_, s)) if s <= score => {}
            _ => {
                best.insert(anchor.image_id.clone(), (g.anchor, score));
            }
        }
    }
    best
}

fn stage_evaluate(ctx: &Context) -> Result<(), StageError> {
    let props = ctx.read_proposals(Split::Test)?;
    let groups = ctx.read_groups(&ctx.out.groups())?;
    let reps = representatives(&groups, &props);
    let test: Vec<&ManifestRecord> = ctx
        .records
        .iter()
        .filter(|r| r.split == Split::Test)
        .collect();
    let scored: Vec<(String, Option<Mask>, Option<Mask>)> = test
        .par_iter()
        .map(|r| -> Result<_, StageError> {
            let img = read_image(&r.image_path).map_err(|source| StageError::Image {
                item: r.item_id.clone(),
                source,
            })?;
            let (w, h) = (img.width(), img.height());
            let seg = match reps.get(&r.item_id) {
                None => None,
                Some(&(id, _)) => {
                    let p = &props[id];
                    let pid = format!("{}__p{:02}", r.item_id, proposal_rank(&props, id));
                    match ctx.proposal_mask(&pid, &p.bbox) {
                        Ok(m) => Some(place(&m, &p.bbox, w, h)?),
                        Err(e) => {
                            warn!("{}: no segmentation ({e})", r.item_id);
                            None
                        }
                    }
                }
            };
            let gt = match (&r.gt_mask_path, &r.gt_box) {
                (Some(path), _) => match read_mask(path) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        warn!("{}: ground-truth mask unreadable ({e})", r.item_id);
                        None
                    }
                },
                (None, Some(b)) => Some(Mask::from_box(w, h, b)?),
                (None, None) => None,
            };
            Ok((r.item_id.clone(), seg, gt))
        })
        .collect::<Result<_, _>>()?;
    let mut masks = HashMap::new();
    let mut gts = HashMap::new();
    let mut class_map = HashMap::new();
    for ((id, seg, gt), r) in scored.into_iter().zip(&test) {
        class_map.insert(id.clone(), r.class.clone());
        if let Some(m) = seg {
            masks.insert(id.clone(), m);
        }
        if let Some(m) = gt {
            gts.insert(id, m);
        }
    }
    let report = evaluate(
        test.iter().map(|r| r.item_id.as_str()),
        &masks,
        &gts,
        &class_map,
    );
    for issue in &report.excluded {
        warn!("evaluate: `{}` excluded: {}", issue.item, issue.reason);
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(ctx.out.report(), text).map_err(file_err(&ctx.out.report()))?;
    info!(
        "evaluate: P = {:.4}, J = {:.4} over {} classes",
        report.avg_precision,
        report.avg_jaccard,
        report.per_class.len()
    );
    Ok(())
}

/// Position of proposal `id` among the proposals of its image, which is the
/// rank used in its descriptor id.
fn proposal_rank(props: &[Proposal], id: usize) -> usize {
    let image = &props[id].image_id;
    props[..id].iter().filter(|p| &p.image_id == image).count()
}

fn descriptor_id(props: &[Proposal], id: usize) -> String {
    format!("{}__p{:02}", props[id].image_id, proposal_rank(props, id))
}

/// Full-image mask with `m` pasted at `bbox`.
fn place(m: &Mask, bbox: &BoundingBox, width: u32, height: u32) -> Result<Mask, MetricsError> {
    let mut full = Mask::filled(width, height, false)?;
    for y in 0..m.height() {
        for x in 0..m.width() {
            let (fx, fy) = (bbox.x() as i64 + x as i64, bbox.y() as i64 + y as i64);
            if m.get(x, y) && fx >= 0 && fy >= 0 && fx < width as i64 && fy < height as i64 {
                full.set(fx as u32, fy as u32, true);
            }
        }
    }
    Ok(full)
}

fn stage_collage(ctx: &Context) -> Result<(), StageError> {
    let props = ctx.read_proposals(Split::Test)?;
    let groups = ctx.read_groups(&ctx.out.groups())?;
    let reps = representatives(&groups, &props);
    let members_path = if ctx.out.filtered_groups().exists() {
        ctx.out.filtered_groups()
    } else {
        ctx.out.groups()
    };
    let member_groups: HashMap<usize, SimilarityGroup> = ctx
        .read_groups(&members_path)?
        .into_iter()
        .map(|g| (g.anchor, g))
        .collect();
    let spec = CollageSpec::standard(ctx.settings.background);
    let mut images: HashMap<String, RgbImage> = HashMap::new();
    let mut load = |image_id: &str| -> Result<RgbImage, StageError> {
        if let Some(img) = images.get(image_id) {
            return Ok(img.clone());
        }
        let r = ctx.record(image_id)?;
        let img = read_image(&r.image_path).map_err(|source| StageError::Image {
            item: r.item_id.clone(),
            source,
        })?;
        images.insert(image_id.to_string(), img.clone());
        Ok(img)
    };
    let mut classes: BTreeMap<&str, Option<(usize, f64)>> = BTreeMap::new();
    for r in &ctx.records {
        let entry = classes.entry(r.class.as_str()).or_insert(None);
        if r.split != Split::Test {
            continue;
        }
        if let Some(&(id, score)) = reps.get(&r.item_id) {
            if entry.is_none_or(|(_, s)| score < s) {
                *entry = Some((id, score));
            }
        }
    }
    for (class, anchor) in classes {
        let Some((anchor, _)) = anchor else {
            warn!("collage: class `{class}` has no test proposals; skipped");
            continue;
        };
        let mut chosen = vec![(anchor, 0.0)];
        if let Some(g) = member_groups.get(&anchor) {
            chosen.extend(
                g.members
                    .iter()
                    .take(SLOT_COUNT - 1)
                    .map(|m| (m.id, m.distance)),
            );
        }
        let mut items = Vec::with_capacity(chosen.len());
        for (id, distance) in chosen {
            let p = props
                .get(id)
                .ok_or_else(|| StageError::Input(format!("group member {id} has no proposal")))?;
            let img = load(&p.image_id)?;
            let region = img.crop(&p.bbox).ok_or_else(|| {
                StageError::Input(format!("proposal {id} lies outside its image"))
            })?;
            let mask = match ctx.proposal_mask(&descriptor_id(&props, id), &p.bbox) {
                Ok(m) => m,
                Err(e) => {
                    warn!("collage: proposal {id} skipped ({e})");
                    continue;
                }
            };
            items.push(CollageItem::new(region, mask, distance)?);
        }
        let canvas = compose(&items, &layout(&items, &spec)?, &spec)?;
        write_ppm(&ctx.out.collage(class), &canvas)?;
        info!("collage: `{class}` with {} objects", items.len());
    }
    Ok(())
}

/// Runs one stage against the artifacts already in `settings.out_dir`.
pub fn run_stage(stage: Stage, settings: &Settings) -> Result<(), PipelineError> {
    let wrap = |source| PipelineError::Stage { stage, source };
    let ctx = Context::new(settings).map_err(wrap)?;
    let result = match stage {
        Stage::Ingest => stage_ingest(&ctx),
        Stage::Train => stage_train(&ctx),
        Stage::Embed => stage_embed(&ctx),
        Stage::Index => stage_index(&ctx),
        Stage::Retrieve => stage_retrieve(&ctx),
        Stage::Evaluate => stage_evaluate(&ctx),
        Stage::Collage => stage_collage(&ctx),
    };
    result.map_err(wrap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub stage: Stage,
    pub wall: Duration,
}

/// Every stage in order; stops at the first failure, leaving earlier
/// artifacts in place.
pub fn run_pipeline(settings: &Settings) -> Result<Vec<StageTiming>, PipelineError> {
    let mut timings = Vec::with_capacity(Stage::ALL.len());
    for stage in Stage::ALL {
        let start = Instant::now();
        run_stage(stage, settings)?;
        let wall = start.elapsed();
        info!("{stage} finished in {:.3} s", wall.as_secs_f64());
        timings.push(StageTiming { stage, wall });
    }
    Ok(timings)
}
