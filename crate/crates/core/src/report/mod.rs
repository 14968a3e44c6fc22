//! Tables, figures and audit files rendered from stored scores.
//!
//! Nothing here computes a bias score: every number is read from word and
//! model scores (or averaged from model scores for the summary column).

mod figure;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use figure::{distribution_figure, y_of, Column, Distribution};

use crate::corpus::Domain;
use crate::scoring::{
    model_average, Attribute, ExclusionReport, MitigationComparison, ModelBiasScore, ScoringError, Thresholds, Variant,
    WordBiasScore,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o failure at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Two-decimal rendering, rounding half away from zero on the shortest
/// decimal form of `x` (so `0.125` gives `0.13` and `2.675` gives `2.68`).
pub fn round_half_up_2(x: f64) -> String {
    assert!(x.is_finite(), "cannot render {x}");
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    let mut cents: u128 = int.parse::<u128>().expect("integral part") * 100
        + u128::from(digits.first().copied().unwrap_or(0)) * 10
        + u128::from(digits.get(1).copied().unwrap_or(0));
    if digits.get(2).is_some_and(|&d| d >= 5) {
        cents += 1;
    }
    let sign = if x < 0.0 && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopWordRow {
    pub rank: usize,
    pub word: String,
    pub score: f64,
}

/// The `k` words with the strongest strictly positive (or strictly
/// negative) score; ties go to the lexicographically smaller word.
pub fn top_k_words(words: &[WordBiasScore], attribute: Attribute, direction: Direction, k: usize) -> Vec<TopWordRow> {
    let sign = match direction {
        Direction::Positive => 1.0,
        Direction::Negative => -1.0,
    };
    let mut hits: Vec<(&str, f64)> =
        words.iter().map(|w| (w.word.as_str(), w.get(attribute))).filter(|(_, v)| v * sign > 0.0).collect();
    hits.sort_by(|a, b| (b.1 * sign).total_cmp(&(a.1 * sign)).then_with(|| a.0.cmp(b.0)));
    hits.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (word, score))| TopWordRow { rank: i + 1, word: word.to_string(), score })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTableRow {
    pub model_id: String,
    pub variant: Variant,
    pub domain: Domain,
    pub age: f64,
    pub race: f64,
    pub gender: f64,
    /// Mean of the model's twelve cells; `None` when the grid is incomplete.
    pub ave: Option<f64>,
}

fn model_rows(models: &[ModelBiasScore], strict: bool) -> Result<Vec<ModelTableRow>, ScoringError> {
    let mut grids: BTreeMap<(String, Variant), BTreeMap<Domain, &ModelBiasScore>> = BTreeMap::new();
    for m in models {
        grids.entry((m.model_id.clone(), m.variant)).or_default().insert(m.domain, m);
    }
    let mut rows = Vec::new();
    for ((model_id, variant), grid) in grids {
        let cells: BTreeMap<(Domain, Attribute), f64> =
            grid.iter().flat_map(|(&d, m)| Attribute::ALL.into_iter().map(move |a| ((d, a), m.get(a)))).collect();
        let ave = match model_average(&cells) {
            Ok(v) => Some(v),
            Err(e) if strict => return Err(e),
            Err(_) => None,
        };
        for &domain in Domain::ALL {
            if let Some(m) = grid.get(&domain) {
                rows.push(ModelTableRow {
                    model_id: model_id.clone(),
                    variant,
                    domain,
                    age: m.age,
                    race: m.race,
                    gender: m.gender,
                    ave,
                });
            }
        }
    }
    Ok(rows)
}

/// One row per (model, variant, domain) with the model's average over its
/// full domain x attribute grid.
pub fn model_bias_table(models: &[ModelBiasScore]) -> Result<Vec<ModelTableRow>, ScoringError> {
    model_rows(models, true)
}

pub fn model_table_csv(rows: &[ModelTableRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "variant", "domain", "age", "race", "gender", "ave"])?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            r.variant.to_string(),
            r.domain.to_string(),
            round_half_up_2(r.age),
            round_half_up_2(r.race),
            round_half_up_2(r.gender),
            r.ave.map(round_half_up_2).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn words_csv(words: &[&WordBiasScore]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "variant", "domain", "word", "gender", "age", "race", "n_pairs"])?;
    for s in words {
        w.write_record([
            s.model_id.clone(),
            s.variant.to_string(),
            s.domain.to_string(),
            s.word.clone(),
            s.gender.to_string(),
            s.age.to_string(),
            s.race.to_string(),
            s.n_pairs.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn top_words_csv(words: &[&WordBiasScore], k: usize) -> Result<Vec<u8>, csv::Error> {
    let mut groups: BTreeMap<(String, Variant), Vec<WordBiasScore>> = BTreeMap::new();
    for s in words {
        groups.entry((s.model_id.clone(), s.variant)).or_default().push((*s).clone());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "variant", "attribute", "direction", "rank", "word", "score"])?;
    for ((model_id, variant), ws) in &groups {
        for attribute in Attribute::ALL {
            for direction in [Direction::Positive, Direction::Negative] {
                for row in top_k_words(ws, attribute, direction, k) {
                    let dir = match direction {
                        Direction::Positive => "positive",
                        Direction::Negative => "negative",
                    };
                    w.write_record([
                        model_id.clone(),
                        variant.to_string(),
                        attribute.to_string(),
                        dir.to_string(),
                        row.rank.to_string(),
                        row.word,
                        round_half_up_2(row.score),
                    ])?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn mitigation_csvs(cmp: &MitigationComparison) -> Result<(Vec<u8>, Vec<u8>), csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "domain", "word", "attribute", "ori", "miti"])?;
    for r in &cmp.rows {
        w.write_record([
            r.model_id.clone(),
            r.domain.to_string(),
            r.word.clone(),
            r.attribute.to_string(),
            r.ori.to_string(),
            r.miti.to_string(),
        ])?;
    }
    let rows = w.into_inner().map_err(|e| e.into_error())?;
    let mut s = csv::Writer::from_writer(Vec::new());
    s.write_record(["model_id", "n_cells", "score_ori", "score_miti"])?;
    for m in &cmp.summaries {
        s.write_record([m.model_id.clone(), m.n_cells.to_string(), round_half_up_2(m.ori), round_half_up_2(m.miti)])?;
    }
    Ok((rows, s.into_inner().map_err(|e| e.into_error())?))
}

/// Everything a report is rendered from.
#[derive(Debug, Clone, Default)]
pub struct RunStore {
    pub run_id: String,
    pub thresholds: Thresholds,
    pub words: Vec<WordBiasScore>,
    pub models: Vec<ModelBiasScore>,
    pub exclusions: ExclusionReport,
    pub mitigation: Option<MitigationComparison>,
    /// Number of words listed per direction in the top-word tables.
    pub top_k: usize,
}

/// Rendered report files, keyed by file name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub run_id: String,
    pub tables: BTreeMap<String, Vec<u8>>,
    pub figures: BTreeMap<String, String>,
    pub audit: serde_json::Value,
}

#[derive(Serialize)]
struct Audit<'a> {
    run_id: &'a str,
    thresholds: Thresholds,
    gray_formula: &'static str,
    exclusions: &'a ExclusionReport,
}

/// Renders the bundle: per domain a word table, a top-word table and a
/// figure (one figure per model), plus the model table, optional
/// mitigation tables and the audit file.
pub fn build_bundle(store: &RunStore) -> Result<ReportBundle, ReportError> {
    let mut bundle = ReportBundle { run_id: store.run_id.clone(), ..Default::default() };
    for &domain in Domain::ALL {
        let mut ws: Vec<&WordBiasScore> = store.words.iter().filter(|w| w.domain == domain).collect();
        if ws.is_empty() {
            continue;
        }
        ws.sort_by_key(|w| w.key());
        bundle.tables.insert(format!("words_{domain}.csv"), words_csv(&ws)?);
        bundle.tables.insert(format!("top_words_{domain}.csv"), top_words_csv(&ws, store.top_k.max(1))?);

        let mut models: Vec<(&str, Variant)> = ws.iter().map(|w| (w.model_id.as_str(), w.variant)).collect();
        models.dedup();
        let single = models.len() == 1;
        for (model_id, variant) in models {
            let subset: Vec<WordBiasScore> =
                ws.iter().filter(|w| w.model_id == model_id && w.variant == variant).map(|w| (*w).clone()).collect();
            let mut d = Distribution::from_words(&subset, model_id, domain);
            d.title = format!("{model_id} ({variant}) / {domain} word bias scores");
            let name = if single {
                format!("dist_{domain}.svg")
            } else {
                format!("dist_{domain}_{}_{variant}.svg", crate::backend::sanitize_model_id(model_id))
            };
            bundle.figures.insert(name, distribution_figure(&d));
        }
    }
    bundle.tables.insert("models.csv".into(), model_table_csv(&model_rows(&store.models, false)?)?);
    if let Some(cmp) = &store.mitigation {
        let (rows, summary) = mitigation_csvs(cmp)?;
        bundle.tables.insert("mitigation.csv".into(), rows);
        bundle.tables.insert("mitigation_summary.csv".into(), summary);
    }
    bundle.audit = serde_json::to_value(Audit {
        run_id: &store.run_id,
        thresholds: store.thresholds,
        gray_formula: crate::vision::GRAY_FORMULA,
        exclusions: &store.exclusions,
    })
    .expect("serializable");
    Ok(bundle)
}

impl ReportBundle {
    /// Replaces `dir` with the bundle's files.
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReportError::Io { path, source }
        };
        match std::fs::remove_dir_all(dir) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io(dir)(e)),
            _ => {}
        }
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, bytes) in &self.tables {
            std::fs::write(dir.join(name), bytes).map_err(io(&dir.join(name)))?;
        }
        for (name, svg) in &self.figures {
            std::fs::write(dir.join(name), svg).map_err(io(&dir.join(name)))?;
        }
        let audit = serde_json::to_vec_pretty(&self.audit).expect("serializable");
        std::fs::write(dir.join("audit.json"), audit).map_err(io(&dir.join("audit.json")))?;
        Ok(())
    }
}

/// Builds the bundle and writes it to `<reports_root>/<run_id>/`.
pub fn emit_bundle(store: &RunStore, reports_root: &Path) -> Result<ReportBundle, ReportError> {
    let bundle = build_bundle(store)?;
    bundle.write(&reports_root.join(&store.run_id))?;
    Ok(bundle)
}
