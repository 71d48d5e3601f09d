//! Command implementations behind the `clif-vqa` binary. Each command takes
//! a resolved [`RunConfig`] and returns what it wrote, so the acceptance
//! suite can drive them without a subprocess.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clif_vqa::config::{BackboneKind, FrameSelection, RunConfig};
use clif_vqa::dataset_io::{
    decode_frames, read_cache, read_cache_meta, uniform_indices, write_cache, CacheMeta, DatasetManifest, FeatureCache,
    FrameSequence, ManifestEntry, TemporalSpec,
};
use clif_vqa::encoder::EncoderHandle;
use clif_vqa::eval::{evaluate, plan_splits, run_splits, EvalReport, SplitsReport};
use clif_vqa::fusion::{
    fit, load_checkpoint, log_to_csv, predict_all, save_checkpoint, CheckpointManifest, ClifModel, EpochLog,
    TrainSample,
};
use clif_vqa::probe::{comparison_to_csv, curves_to_csv, prompt_comparison, response_curve, ComparisonRow, ResponseCurve};
use clif_vqa::prompt_bank::{DescriptionKind, PromptBank};
use clif_vqa::sfe::{extract_video_semantics, SemanticScorer, VideoSemanticMap};
use clif_vqa::spatial::{prepare_patches, sample_fragments, FragmentSpec, PreparedClip};
use clif_vqa::{Error, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub const SEMANTIC_EXTRACTOR: &str = "sfe/1";
pub const FRAGMENT_EXTRACTOR: &str = "fragments/1";

/// Resolved config plus the encoder and prompt bank it selects.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub encoder: EncoderHandle,
    pub bank: PromptBank,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = EncoderHandle::from_config(&cfg.encoder)?;
        let bank = cfg.prompt_bank()?;
        Ok(Context { cfg, encoder, bank })
    }

    /// `2r`, the semantic channel count.
    pub fn semantic_channels(&self) -> usize {
        2 * self.bank.len()
    }
}

/// Content hash of a video file or frame directory.
pub fn source_fingerprint(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        h.update(f.file_name().unwrap_or_default().as_encoded_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn semantic_cache_path(cache_dir: &Path, id: &str) -> PathBuf {
    cache_dir.join(format!("{id}.sem.clfc"))
}

pub fn fragment_cache_path(cache_dir: &Path, id: &str) -> PathBuf {
    cache_dir.join(format!("{id}.frag.clfc"))
}

/// Per-video fragment seed: the run seed mixed with the video id.
fn fragment_seed(seed: u64, id: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{id}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn frames_key(sel: FrameSelection) -> String {
    match sel {
        FrameSelection::All => "all".into(),
        FrameSelection::Uniform(n) => n.to_string(),
    }
}

fn semantic_meta(ctx: &Context, source: &str) -> CacheMeta {
    let extra = BTreeMap::from([
        ("encoder".to_string(), ctx.encoder.fingerprint()),
        ("frames".to_string(), frames_key(ctx.cfg.sfe.frames)),
        ("grid".to_string(), ctx.cfg.sfe.grid.to_string()),
        ("source".to_string(), source.to_string()),
    ]);
    CacheMeta { prompt_digest: ctx.bank.digest().to_string(), extractor_version: SEMANTIC_EXTRACTOR.into(), extra }
}

fn fragment_meta(ctx: &Context, id: &str, source: &str) -> CacheMeta {
    let s = &ctx.cfg.spatial;
    let extra = BTreeMap::from([
        ("frames".to_string(), s.frames.to_string()),
        ("grid_f".to_string(), s.grid_f.to_string()),
        ("patch".to_string(), s.patch.to_string()),
        ("seed".to_string(), fragment_seed(ctx.cfg.seed, id).to_string()),
        ("source".to_string(), source.to_string()),
    ]);
    CacheMeta { prompt_digest: String::new(), extractor_version: FRAGMENT_EXTRACTOR.into(), extra }
}

fn cache_is_current(path: &Path, meta: &CacheMeta) -> bool {
    path.exists() && read_cache_meta(path).map(|(_, m)| &m == meta).unwrap_or(false)
}

fn select_sfe_frames(all: &FrameSequence, sel: FrameSelection) -> Result<FrameSequence> {
    match sel {
        FrameSelection::All => Ok(all.clone()),
        FrameSelection::Uniform(n) if n >= all.len() => {
            if n > all.len() {
                log::warn!("{}: {n} frames requested, {} available; using all", all.source_id, all.len());
            }
            Ok(all.clone())
        }
        FrameSelection::Uniform(n) => {
            let idx = uniform_indices(all.len(), n);
            FrameSequence::new(
                idx.iter().map(|&i| all.frames[i].clone()).collect(),
                idx.iter().map(|&i| all.timestamps[i]).collect(),
                all.source_id.clone(),
            )
        }
    }
}

/// Semantic map `[2r, T]` of a decoded clip.
pub fn semantic_features(ctx: &Context, frames: &FrameSequence) -> Result<VideoSemanticMap<f32>> {
    let scorer = SemanticScorer::new(&ctx.encoder, &ctx.bank)?;
    let selected = select_sfe_frames(frames, ctx.cfg.sfe.frames)?;
    extract_video_semantics(&selected, ctx.cfg.sfe.grid, &ctx.encoder, &scorer)
}

pub fn fragment_spec(ctx: &Context, id: &str) -> FragmentSpec {
    let s = &ctx.cfg.spatial;
    FragmentSpec { grid: s.grid_f, patch: s.patch, frames_out: s.frames, seed: fragment_seed(ctx.cfg.seed, id) }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VideoExtraction {
    pub semantic_computed: bool,
    pub fragments_computed: bool,
}

/// Write the enabled branches' caches for one video, skipping any that are
/// already current for this config, encoder and source content.
pub fn extract_video(ctx: &Context, entry: &ManifestEntry, cache_dir: &Path) -> Result<VideoExtraction> {
    let source = source_fingerprint(&entry.path)?;
    let sem_path = semantic_cache_path(cache_dir, &entry.video_id);
    let frag_path = fragment_cache_path(cache_dir, &entry.video_id);
    let sem_meta = semantic_meta(ctx, &source);
    let frag_meta = fragment_meta(ctx, &entry.video_id, &source);
    let need_sem = ctx.cfg.sfe.enabled && !cache_is_current(&sem_path, &sem_meta);
    let need_frag = ctx.cfg.spatial.enabled && !cache_is_current(&frag_path, &frag_meta);
    if !need_sem && !need_frag {
        return Ok(VideoExtraction::default());
    }
    let frames = decode_frames(&entry.path, TemporalSpec::All)?;
    if need_sem {
        let map = semantic_features(ctx, &frames)?;
        let shape = map.values().shape().to_vec();
        let data = map.values().iter().copied().collect();
        write_cache(&FeatureCache::new(shape, data, sem_meta)?, &sem_path)?;
    }
    if need_frag {
        let clip = sample_fragments(&frames, &fragment_spec(ctx, &entry.video_id))?;
        let shape = clip.shape().to_vec();
        let data = clip.iter().copied().collect();
        write_cache(&FeatureCache::new(shape, data, frag_meta)?, &frag_path)?;
    }
    Ok(VideoExtraction { semantic_computed: need_sem, fragments_computed: need_frag })
}

#[derive(Debug, Default)]
pub struct ExtractSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: Vec<(String, Error)>,
}

pub fn cmd_extract(ctx: &Context, manifest: &DatasetManifest, cache_dir: &Path) -> Result<ExtractSummary> {
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| (e.video_id.clone(), extract_video(ctx, e, cache_dir)))
        .collect();
    let mut summary = ExtractSummary::default();
    for (id, r) in results {
        match r {
            Ok(x) if x.semantic_computed || x.fragments_computed => summary.computed += 1,
            Ok(_) => summary.skipped += 1,
            Err(e) => {
                log::error!("{id}: {e}");
                summary.failed.push((id, e));
            }
        }
    }
    log::info!("extract: {} computed, {} up to date, {} failed", summary.computed, summary.skipped, summary.failed.len());
    Ok(summary)
}

fn semantic_from_cache(ctx: &Context, path: &Path) -> Result<VideoSemanticMap<f32>> {
    let c = clif_vqa::dataset_io::read_cache_expecting(path, ctx.bank.digest())?;
    if c.shape.len() != 2 {
        return Err(Error::Shape(format!("{}: semantic cache has shape {:?}", path.display(), c.shape)));
    }
    let arr = ndarray::Array2::from_shape_vec((c.shape[0], c.shape[1]), c.data).expect("cache shape checked");
    VideoSemanticMap::from_array(arr)
}

fn fragments_from_cache(path: &Path) -> Result<PreparedClip<f32>> {
    let c = read_cache(path)?;
    if c.shape.len() != 4 {
        return Err(Error::Shape(format!("{}: fragment cache has shape {:?}", path.display(), c.shape)));
    }
    let clip = ndarray::Array4::from_shape_vec((c.shape[0], c.shape[1], c.shape[2], c.shape[3]), c.data)
        .expect("cache shape checked");
    prepare_patches(&clip)
}

/// Model inputs for every manifest entry, extracting whatever is missing.
pub fn load_samples(ctx: &Context, manifest: &DatasetManifest, cache_dir: &Path) -> Result<Vec<TrainSample<f32>>> {
    let summary = cmd_extract(ctx, manifest, cache_dir)?;
    if let Some((_, e)) = summary.failed.into_iter().next() {
        return Err(e);
    }
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let semantic = if ctx.cfg.sfe.enabled {
                Some(semantic_from_cache(ctx, &semantic_cache_path(cache_dir, &e.video_id))?)
            } else {
                None
            };
            let fragments = if ctx.cfg.spatial.enabled {
                Some(fragments_from_cache(&fragment_cache_path(cache_dir, &e.video_id))?)
            } else {
                None
            };
            Ok(TrainSample { id: e.video_id.clone(), semantic, fragments, mos: e.mos })
        })
        .collect()
}

pub struct TrainOutcome {
    pub checkpoint: CheckpointManifest,
    pub log: Vec<EpochLog>,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
}

/// Train on the whole manifest; writes `<out>/checkpoint/` and
/// `<out>/train_log.csv`.
pub fn cmd_train(ctx: &Context, manifest: &DatasetManifest, cache_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    let samples = load_samples(ctx, manifest, cache_dir)?;
    let mut model = ClifModel::from_config(&ctx.cfg, ctx.semantic_channels(), ctx.cfg.seed)?;
    let log = fit(&mut model, &samples, &ctx.cfg.train, ctx.cfg.seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint_dir = out.join("checkpoint");
    let checkpoint = save_checkpoint(&model, &ctx.cfg, ctx.bank.digest(), ctx.cfg.seed, &checkpoint_dir)?;
    let log_path = out.join("train_log.csv");
    fs::write(&log_path, log_to_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome { checkpoint, log, checkpoint_dir, log_path })
}

/// Load a checkpoint, refusing one built with another prompt bank or
/// incompatible extraction settings.
pub fn load_model(ctx: &Context, checkpoint: &Path) -> Result<ClifModel<f32>> {
    let (model, manifest) = load_checkpoint::<f32>(checkpoint)?;
    if manifest.prompt_digest != ctx.bank.digest() {
        return Err(Error::DigestMismatch {
            expected: ctx.bank.digest().to_string(),
            found: manifest.prompt_digest,
        });
    }
    let stored = manifest.run_config()?;
    let (a, b) = (&stored, &ctx.cfg);
    if a.sfe.enabled != b.sfe.enabled || a.spatial.enabled != b.spatial.enabled {
        return Err(Error::Config("checkpoint and config enable different branches".into()));
    }
    if a.sfe.t_fix != b.sfe.t_fix || a.spatial.frames != b.spatial.frames || a.spatial.grid_f != b.spatial.grid_f || a.spatial.patch != b.spatial.patch {
        return Err(Error::Config("checkpoint was trained with different sfe/spatial geometry".into()));
    }
    if a.spatial.backbone == BackboneKind::Stub && a.seed != b.seed {
        log::warn!("stub backbone is rebuilt from the checkpoint's seed {}", a.seed);
    }
    Ok(model)
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub predictions: Vec<(String, f64, f64)>,
}

/// Score every manifest entry with a checkpoint; writes `eval_report.json`,
/// `eval_report.csv` and `predictions.csv` under `out`.
pub fn cmd_eval(ctx: &Context, manifest: &DatasetManifest, cache_dir: &Path, checkpoint: &Path, out: &Path) -> Result<EvalOutcome> {
    let model = load_model(ctx, checkpoint)?;
    let samples = load_samples(ctx, manifest, cache_dir)?;
    let pred = predict_all(&model, &samples)?;
    let gt: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let report = evaluate(&pred, &gt, 0)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("eval_report.json"), &serde_json::to_string_pretty(&report).expect("serializes"))?;
    write_text(
        &out.join("eval_report.csv"),
        &format!("split,n,srocc,plcc,krocc\n{},{},{},{},{}\n", report.split_id, report.n, report.srocc, report.plcc, report.krocc),
    )?;
    let predictions: Vec<_> = samples.iter().zip(&pred).map(|(s, &p)| (s.id.clone(), s.mos, p)).collect();
    let mut csv = String::from("video_id,mos,predicted\n");
    for (id, m, p) in &predictions {
        csv.push_str(&format!("{id},{m},{p}\n"));
    }
    write_text(&out.join("predictions.csv"), &csv)?;
    Ok(EvalOutcome { report, predictions })
}

/// Predicted MOS for one video, without touching any cache.
pub fn cmd_predict(ctx: &Context, checkpoint: &Path, video: &Path) -> Result<f64> {
    let model = load_model(ctx, checkpoint)?;
    let id = video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let frames = decode_frames(video, TemporalSpec::All)?;
    let semantic = if ctx.cfg.sfe.enabled { Some(semantic_features(ctx, &frames)?) } else { None };
    let fragments = if ctx.cfg.spatial.enabled {
        Some(prepare_patches(&sample_fragments(&frames, &fragment_spec(ctx, &id))?)?)
    } else {
        None
    };
    model.predict(&TrainSample { id, semantic, fragments, mos: f64::NAN })
}

/// Response curves of the configured description and distortion for each
/// video; writes one CSV.
pub fn cmd_probe_curves(ctx: &Context, videos: &[PathBuf], out: &Path) -> Result<Vec<ResponseCurve>> {
    let p = &ctx.cfg.probe;
    let curves = videos
        .iter()
        .map(|v| {
            let frames = select_sfe_frames(&decode_frames(v, TemporalSpec::All)?, ctx.cfg.sfe.frames)?;
            response_curve(&frames, &p.description, p.kind, &p.levels, &ctx.encoder, &ctx.bank, ctx.cfg.sfe.grid, ctx.cfg.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    // prefix each curve's rows with the clip they came from
    let mut csv = String::from("video,");
    for (i, (v, c)) in videos.iter().zip(&curves).enumerate() {
        let body = curves_to_csv(std::slice::from_ref(c));
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            csv.push_str(header);
            csv.push('\n');
        }
        for line in lines {
            csv.push_str(&format!("{},{line}\n", v.display()));
        }
    }
    write_text(out, &csv)?;
    Ok(curves)
}

/// Resolve `probe.banks` names (`all`, `objective`, `subjective`) against
/// the configured bank.
pub fn comparison_banks(ctx: &Context) -> Result<Vec<(String, PromptBank)>> {
    let base = match &ctx.cfg.prompts.path {
        Some(p) => PromptBank::load(p)?,
        None => clif_vqa::prompt_bank::default_bank(),
    }
    .with_new_template(&ctx.cfg.prompts.template)?;
    ctx.cfg
        .probe
        .banks
        .iter()
        .map(|name| {
            let kinds = match name.as_str() {
                "all" => vec![DescriptionKind::Objective, DescriptionKind::Subjective],
                other => vec![other.parse::<DescriptionKind>()?],
            };
            Ok((name.clone(), base.subset(&kinds.into_iter().collect())?))
        })
        .collect()
}

/// Side-by-side split metrics per prompt bank; writes `comparison.csv` and
/// `comparison.json` under `out`.
pub fn cmd_probe_compare(ctx: &Context, manifest: &DatasetManifest, out: &Path) -> Result<Vec<ComparisonRow>> {
    let rows = prompt_comparison(manifest, &comparison_banks(ctx)?, &ctx.encoder, &ctx.cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("comparison.csv"), &comparison_to_csv(&rows))?;
    write_text(&out.join("comparison.json"), &serde_json::to_string_pretty(&rows).expect("serializes"))?;
    Ok(rows)
}

/// Train and test the full model over `eval.splits` seeded partitions;
/// writes `splits_report.json` and `splits_report.csv` under `out`.
pub fn cmd_splits(ctx: &Context, manifest: &DatasetManifest, cache_dir: &Path, out: &Path) -> Result<SplitsReport> {
    let splits = plan_splits(manifest.len(), ctx.cfg.eval.splits, ctx.cfg.eval.train_frac, ctx.cfg.seed)?;
    let samples = load_samples(ctx, manifest, cache_dir)?;
    let report = run_splits(&splits, |split| {
        let seed = ctx.cfg.seed.wrapping_add(split.id as u64);
        let train: Vec<_> = split.train.iter().map(|&i| samples[i].clone()).collect();
        let mut model = ClifModel::from_config(&ctx.cfg, ctx.semantic_channels(), seed)?;
        fit(&mut model, &train, &ctx.cfg.train, seed)?;
        let pred = split.test.iter().map(|&i| model.predict(&samples[i])).collect::<Result<Vec<_>>>()?;
        Ok((pred, split.test.iter().map(|&i| samples[i].mos).collect()))
    })?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("splits_report.json"), &report.to_json())?;
    write_text(&out.join("splits_report.csv"), &report.to_csv())?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
