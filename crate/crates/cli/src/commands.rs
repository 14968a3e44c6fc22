//! The pipeline stages. Each returns a JSON summary for stdout.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fairlens_core::backend::{load_manifest, run_matrix, Cache, GenerationRecord, MatrixOptions, Regeneration};
use fairlens_core::corpus::{
    build_prompt_list, filter_lexicon, load_lexicon, load_seed_manifest_with, sample_seed_set, write_seed_manifest,
    AgeBand, Coverage, DemographicGroup, Domain, Gender, PromptList, Race, SeedSet,
};
use fairlens_core::jsonl;
use fairlens_core::report::{emit_bundle, RunStore};
use fairlens_core::scoring::{
    exact, exact_word_scores, mitigation_delta, rescore_with_thresholds, score_observations, table_cells,
    ExclusionReport, MitigationComparison, ModelBiasScore, PairObservation, PairScore, ScoreSet, Thresholds, Variant,
    WordBiasScore,
};
use fairlens_core::vision::{
    assess_path, AssessOptions, FaceAnalyzer, HttpAnalyzer, ImageGender, ImageProperties, PropertiesRow,
    SidecarAnalyzer, VisionError,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{AnalyzerConfig, LoadedConfig};
use crate::error::CliError;
use crate::run::{record_stage, RunManifest, RunPaths};

fn paths(cfg: &LoadedConfig) -> RunPaths {
    RunPaths::new(cfg.run_dir())
}

fn analyzer(cfg: &LoadedConfig) -> Box<dyn FaceAnalyzer> {
    match &cfg.analyzer {
        AnalyzerConfig::Sidecar => Box::new(SidecarAnalyzer),
        AnalyzerConfig::Http(c) => Box::new(HttpAnalyzer::new(c.clone())),
    }
}

fn assess_options(cfg: &LoadedConfig) -> AssessOptions {
    AssessOptions { bounds: cfg.config.exposure, region: cfg.config.face_region }
}

fn load_seeds(cfg: &LoadedConfig, stage: &'static str) -> Result<SeedSet, CliError> {
    let path = &cfg.config.seed_manifest;
    if !path.is_file() {
        if cfg.config.corpus_index.is_some() {
            return Err(CliError::StageDependencyMissing { stage, needs: "sample-seeds", path: path.clone() });
        }
        return Err(CliError::config(format!("seed manifest {} does not exist", path.display())));
    }
    let coverage = if cfg.config.allow_partial_groups { Coverage::Partial } else { Coverage::Full };
    load_seed_manifest_with(path, coverage).map_err(CliError::config)
}

fn load_prompts(p: &RunPaths, stage: &'static str) -> Result<PromptList, CliError> {
    PromptList::load(&p.require(p.prompts(), stage, "build-prompts")?).map_err(CliError::failure)
}

/// Applies `f` to every item on up to `workers` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("lock") = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("lock").expect("every slot filled")).collect()
}

#[derive(Deserialize)]
struct IndexRow {
    path: PathBuf,
    race: Race,
    gender: Gender,
    age_band: AgeBand,
}

pub fn sample_seeds(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let index_path = cfg
        .config
        .corpus_index
        .as_ref()
        .ok_or_else(|| CliError::config("sample-seeds needs corpus_index in the config"))?;
    let base = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(index_path).map_err(CliError::config)?;
    let mut index = Vec::new();
    for row in reader.deserialize::<IndexRow>() {
        let row = row.map_err(|e| CliError::config(format!("corpus index {}: {e}", index_path.display())))?;
        let path = if row.path.is_absolute() { row.path } else { base.join(row.path) };
        index.push((path, DemographicGroup::new(row.race, row.gender, row.age_band)));
    }
    let set = sample_seed_set(&index, cfg.config.per_group, cfg.config.rng_seed).map_err(CliError::config)?;
    if let Some(parent) = cfg.config.seed_manifest.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_seed_manifest(&set, &cfg.config.seed_manifest).map_err(CliError::failure)?;
    let detail = json!({ "candidates": index.len(), "selected": set.len(), "per_group": cfg.config.per_group });
    record_stage(cfg, &paths(cfg), "sample_seeds", detail.clone())?;
    Ok(detail)
}

pub fn build_prompts(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let entries = load_lexicon(&cfg.config.lexicon).map_err(CliError::config)?;
    let kept = filter_lexicon(&entries);
    let list = build_prompt_list(&kept).map_err(CliError::config)?;
    let p = paths(cfg);
    std::fs::create_dir_all(&p.dir)?;
    list.save(&p.prompts()).map_err(CliError::failure)?;
    let summary = list.summary();
    let detail = json!({
        "lexicon_entries": entries.len(),
        "filtered_out": entries.len() - kept.len(),
        "prompts": summary.total,
        "per_domain": summary.per_domain,
    });
    record_stage(cfg, &p, "build_prompts", detail.clone())?;
    Ok(detail)
}

pub fn generate(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let p = paths(cfg);
    let prompts = load_prompts(&p, "generate")?;
    let seeds = load_seeds(cfg, "generate")?;
    let backend = cfg.backend.build(cfg.config.rng_seed)?;
    let cache = Cache::new(p.cache());
    let analyzer = analyzer(cfg);
    let options = assess_options(cfg);
    let assess = |path: &Path| assess_path(path, analyzer.as_ref(), options);
    let check = |props: &ImageProperties| props.gender != ImageGender::Inconsistent;

    let mut opts = MatrixOptions::new(cfg.backend.model_id(), p.generation());
    opts.params = cfg.backend.params().clone();
    opts.mitigation_suffix = (cfg.config.variant == Variant::Miti).then(|| cfg.config.mitigation_suffix.clone());
    opts.concurrency_limit = cfg.config.concurrency;
    opts.failure_ceiling = cfg.config.failure_ceiling;
    opts.failures_path = Some(p.failures());
    opts.regeneration = (cfg.config.max_attempts > 1).then_some(Regeneration {
        assess: &assess,
        check: &check,
        max_attempts: cfg.config.max_attempts,
    });
    let outcome = run_matrix(&seeds, &prompts, backend.as_ref(), &cache, &opts)?;
    let detail = json!({
        "model_id": cfg.backend.model_id(),
        "total": seeds.len() * prompts.len(),
        "resumed": outcome.resumed,
        "completed": outcome.completed,
        "failed": outcome.failed,
    });
    record_stage(cfg, &p, "generate", detail.clone())?;
    Ok(detail)
}

fn image_key(path: &Path) -> String {
    path.display().to_string()
}

/// Completed generation records keyed by (seed id, prompt id).
fn completed_records(
    p: &RunPaths,
    stage: &'static str,
) -> Result<HashMap<(String, String), GenerationRecord>, CliError> {
    let path = p.require(p.generation(), stage, "generate")?;
    Ok(load_manifest(&path)?.into_iter().map(|r| ((r.seed_id.clone(), r.prompt_id.clone()), r)).collect())
}

pub fn assess(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let p = paths(cfg);
    let records = completed_records(&p, "assess")?;
    let seeds = load_seeds(cfg, "assess")?;
    let prompts = load_prompts(&p, "assess")?;

    let mut images: Vec<PathBuf> = seeds.seeds().iter().map(|s| s.image_path.clone()).collect();
    for seed in seeds.seeds() {
        for prompt in prompts.prompts() {
            if let Some(r) = records.get(&(seed.id.clone(), prompt.id.clone())) {
                images.push(r.image_path.clone());
            }
        }
    }
    let mut seen = BTreeSet::new();
    images.retain(|i| seen.insert(image_key(i)));

    let mut known: HashMap<String, PropertiesRow> = HashMap::new();
    if p.properties().is_file() {
        for row in jsonl::read::<PropertiesRow>(&p.properties())? {
            known.insert(row.image.clone(), row);
        }
    }
    let todo: Vec<&PathBuf> = images.iter().filter(|i| !known.contains_key(&image_key(i))).collect();
    let reused = images.len() - todo.len();
    let analyzer = analyzer(cfg);
    let options = assess_options(cfg);
    let results = par_map(&todo, cfg.config.concurrency, |path| assess_path(path, analyzer.as_ref(), options));
    for (path, result) in todo.iter().zip(results) {
        let props = result.map_err(|e| match e {
            VisionError::AnalyzerUnavailable(_) | VisionError::AnalyzerMalformedResponse(_) => {
                CliError::BackendFailure(format!("{}: {e}", path.display()))
            }
            other => CliError::failure(format!("{}: {other}", path.display())),
        })?;
        known.insert(image_key(path), PropertiesRow::new(image_key(path), &props));
    }
    let rows: Vec<&PropertiesRow> = images.iter().map(|i| &known[&image_key(i)]).collect();
    jsonl::write(&p.properties(), &rows)?;
    let valid = rows.iter().filter(|r| r.valid).count();
    let detail = json!({ "images": rows.len(), "assessed": todo.len(), "reused": reused, "valid": valid });
    record_stage(cfg, &p, "assess", detail.clone())?;
    Ok(detail)
}

/// One observation per (seed, prompt) of the matrix, from stored assessments.
fn observations(cfg: &LoadedConfig, p: &RunPaths, stage: &'static str) -> Result<Vec<PairObservation>, CliError> {
    let props_path = p.require(p.properties(), stage, "assess")?;
    let props: HashMap<String, ImageProperties> =
        jsonl::read::<PropertiesRow>(&props_path)?.into_iter().map(|r| (r.image.clone(), r.properties())).collect();
    let records = completed_records(p, stage)?;
    let seeds = load_seeds(cfg, stage)?;
    let prompts = load_prompts(p, stage)?;
    let lookup = |path: &Path| {
        props.get(&image_key(path)).cloned().ok_or_else(|| CliError::StageDependencyMissing {
            stage,
            needs: "assess",
            path: props_path.clone(),
        })
    };
    let mut out = Vec::with_capacity(seeds.len() * prompts.len());
    for seed in seeds.seeds() {
        let seed_props = lookup(&seed.image_path)?;
        for prompt in prompts.prompts() {
            let generated = match records.get(&(seed.id.clone(), prompt.id.clone())) {
                Some(r) => Some(lookup(&r.image_path)?),
                None => None,
            };
            out.push(PairObservation {
                seed_id: seed.id.clone(),
                prompt_id: prompt.id.clone(),
                word: prompt.word.clone(),
                domain: prompt.domain,
                model_id: cfg.backend.model_id().to_string(),
                variant: cfg.config.variant,
                seed: seed_props.clone(),
                generated,
            });
        }
    }
    Ok(out)
}

fn write_scores(dir: &Path, set: &ScoreSet) -> Result<(), CliError> {
    jsonl::write(&dir.join("pairs.jsonl"), &set.pairs)?;
    jsonl::write(&dir.join("words.jsonl"), &set.words)?;
    jsonl::write(&dir.join("models.jsonl"), &set.models)?;
    let exclusions = serde_json::to_vec_pretty(&set.exclusions).expect("serializable");
    jsonl::write_bytes(&dir.join("exclusions.json"), &exclusions)?;
    Ok(())
}

pub fn score(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let p = paths(cfg);
    let obs = observations(cfg, &p, "score")?;
    let set = score_observations(&obs, cfg.config.thresholds)?;
    write_scores(&p.dir, &set)?;
    let detail = json!({
        "thresholds": set.thresholds,
        "pairs": set.pairs.len(),
        "words": set.words.len(),
        "models": set.models.len(),
        "generated": set.exclusions.total_generated,
        "excluded": set.exclusions.total_excluded,
    });
    record_stage(cfg, &p, "score", detail.clone())?;
    Ok(detail)
}

/// Thresholds the stored scores were computed with.
fn scored_thresholds(cfg: &LoadedConfig, p: &RunPaths) -> Result<Thresholds, CliError> {
    let recorded = RunManifest::load(&p.manifest())?
        .and_then(|m| m.stage("score").and_then(|s| s.detail.get("thresholds").cloned()));
    match recorded {
        Some(v) => serde_json::from_value(v).map_err(CliError::failure),
        None => Ok(cfg.config.thresholds),
    }
}

struct StoredScores {
    thresholds: Thresholds,
    pairs: Vec<PairScore>,
    words: Vec<WordBiasScore>,
    models: Vec<ModelBiasScore>,
    exclusions: ExclusionReport,
}

fn load_scores(
    cfg: &LoadedConfig,
    p: &RunPaths,
    stage: &'static str,
    with_pairs: bool,
) -> Result<StoredScores, CliError> {
    let words = jsonl::read(&p.require(p.words(), stage, "score")?)?;
    let models = jsonl::read(&p.require(p.models(), stage, "score")?)?;
    let excl_path = p.require(p.exclusions(), stage, "score")?;
    let exclusions = serde_json::from_slice(&std::fs::read(&excl_path)?)
        .map_err(|e| CliError::failure(format!("{}: {e}", excl_path.display())))?;
    let pairs = if with_pairs { jsonl::read(&p.require(p.pairs(), stage, "score")?)? } else { Vec::new() };
    Ok(StoredScores { thresholds: scored_thresholds(cfg, p)?, pairs, words, models, exclusions })
}

pub fn report(cfg: &LoadedConfig) -> Result<Value, CliError> {
    let p = paths(cfg);
    let stored = load_scores(cfg, &p, "report", false)?;
    let mitigation: Option<MitigationComparison> = if p.mitigation().is_file() {
        Some(serde_json::from_slice(&std::fs::read(p.mitigation())?).map_err(CliError::failure)?)
    } else {
        None
    };
    let store = RunStore {
        run_id: cfg.run_id(),
        thresholds: stored.thresholds,
        words: stored.words,
        models: stored.models,
        exclusions: stored.exclusions,
        mitigation,
        top_k: cfg.config.top_k,
    };
    let bundle = emit_bundle(&store, &cfg.reports_root())?;
    let detail = json!({
        "dir": cfg.reports_root().join(&bundle.run_id),
        "tables": bundle.tables.keys().collect::<Vec<_>>(),
        "figures": bundle.figures.keys().collect::<Vec<_>>(),
    });
    record_stage(cfg, &p, "report", detail.clone())?;
    Ok(detail)
}

fn threshold_label(t: &Thresholds) -> String {
    format!("age{}_race{}", t.age(), t.race())
}

/// Rescores a finished run at every threshold combination and checks the
/// result against scoring from scratch and against the rescaling identity.
pub fn ablate(cfg: &LoadedConfig, ages: &[f64], races: &[f64]) -> Result<Value, CliError> {
    let p = paths(cfg);
    let stored = load_scores(cfg, &p, "ablate", true)?;
    let base = ScoreSet {
        thresholds: stored.thresholds,
        pairs: stored.pairs,
        words: stored.words,
        models: stored.models,
        exclusions: stored.exclusions,
    };
    let obs = observations(cfg, &p, "ablate")?;
    let base_exact = exact_word_scores(&base.pairs, &base.thresholds);
    let (base_age, base_race) = (exact::exact(base.thresholds.age()), exact::exact(base.thresholds.race()));

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary
        .write_record(["age_threshold", "race_threshold", "model_id", "variant", "domain", "age", "race", "gender"])
        .map_err(CliError::failure)?;
    let mut cells = Vec::new();
    for &ta in ages {
        for &tr in races {
            let t = Thresholds::new(ta, tr).map_err(CliError::config)?;
            let rescored = rescore_with_thresholds(&base, t);
            let scratch = score_observations(&obs, t)?;
            let matches = jsonl::to_bytes(&rescored.words) == jsonl::to_bytes(&scratch.words)
                && jsonl::to_bytes(&rescored.models) == jsonl::to_bytes(&scratch.models);
            let (age_t, race_t) = (exact::exact(ta), exact::exact(tr));
            let now = exact_word_scores(&base.pairs, &t);
            let identity = now.len() == base_exact.len()
                && now.iter().zip(&base_exact).all(|(n, b)| {
                    n.key == b.key
                        && n.gender == b.gender
                        && &n.age * &age_t == &b.age * &base_age
                        && &n.race * &race_t == &b.race * &base_race
                });

            let dir = p.ablation().join(threshold_label(&t));
            jsonl::write(&dir.join("words.jsonl"), &rescored.words)?;
            jsonl::write(&dir.join("models.jsonl"), &rescored.models)?;
            for m in &rescored.models {
                summary
                    .write_record([
                        ta.to_string(),
                        tr.to_string(),
                        m.model_id.clone(),
                        m.variant.to_string(),
                        m.domain.to_string(),
                        m.age.to_string(),
                        m.race.to_string(),
                        m.gender.to_string(),
                    ])
                    .map_err(CliError::failure)?;
            }
            cells.push(json!({
                "age_threshold": ta,
                "race_threshold": tr,
                "matches_from_scratch": matches,
                "rescale_identity": identity,
            }));
        }
    }
    let bytes = summary.into_inner().map_err(|e| CliError::failure(e.error()))?;
    jsonl::write_bytes(&p.ablation().join("summary.csv"), &bytes)?;
    let broken: Vec<&Value> = cells
        .iter()
        .filter(|c| c["matches_from_scratch"] != json!(true) || c["rescale_identity"] != json!(true))
        .collect();
    if !broken.is_empty() {
        return Err(CliError::failure(format!("ablation identity violated in {} threshold cells", broken.len())));
    }
    let detail = json!({ "base_thresholds": base.thresholds, "cells": cells });
    record_stage(cfg, &p, "ablate", detail.clone())?;
    Ok(detail)
}

/// Compares the original run with the mitigated run of the same config on
/// the most biased cells of the original, then re-emits the mitigated report.
pub fn mitigate_compare(cfg: &LoadedConfig) -> Result<Value, CliError> {
    if cfg.config.mitigation_suffix.trim().is_empty() {
        return Err(CliError::config("mitigate-compare needs a non-empty mitigation_suffix"));
    }
    let ori = cfg.with_variant(Variant::Ori);
    let miti = cfg.with_variant(Variant::Miti);
    let (op, mp) = (paths(&ori), paths(&miti));
    let ori_words: Vec<WordBiasScore> =
        jsonl::read(&op.require(op.words(), "mitigate-compare", "score --variant ori")?)?;
    let miti_words: Vec<WordBiasScore> =
        jsonl::read(&mp.require(mp.words(), "mitigate-compare", "score --variant miti")?)?;

    let models: BTreeSet<&str> = ori_words.iter().map(|w| w.model_id.as_str()).collect();
    let selection: Vec<_> =
        models.iter().flat_map(|m| Domain::ALL.iter().flat_map(|&d| table_cells(&ori_words, m, d))).collect();
    let comparison = mitigation_delta(&ori_words, &miti_words, Some(&selection))?;
    let bytes = serde_json::to_vec_pretty(&comparison).expect("serializable");
    jsonl::write_bytes(&mp.mitigation(), &bytes)?;
    let report = report(&miti)?;
    let detail = json!({
        "ori_run": ori.run_id(),
        "miti_run": miti.run_id(),
        "cells": comparison.rows.len(),
        "summaries": comparison.summaries,
        "report": report,
    });
    record_stage(&miti, &mp, "mitigate_compare", detail.clone())?;
    Ok(detail)
}
