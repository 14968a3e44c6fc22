//! Original vs mitigated prompt comparison.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::exact;
use super::{Attribute, ScoringError, WordBiasScore};
use crate::corpus::Domain;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MitigationKey {
    pub model_id: String,
    pub domain: Domain,
    pub word: String,
    pub attribute: Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub model_id: String,
    pub domain: Domain,
    pub word: String,
    pub attribute: Attribute,
    pub ori: f64,
    pub miti: f64,
}

/// Mean absolute score per variant over the compared cells of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationSummary {
    pub model_id: String,
    pub n_cells: usize,
    pub ori: f64,
    pub miti: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationComparison {
    pub rows: Vec<MitigationRow>,
    pub summaries: Vec<MitigationSummary>,
}

type WordIndex<'a> = BTreeMap<(String, Domain, String), &'a WordBiasScore>;

fn index(words: &[WordBiasScore]) -> WordIndex<'_> {
    words.iter().map(|w| ((w.model_id.clone(), w.domain, w.word.clone()), w)).collect()
}

/// Pairs original and mitigated word scores.
///
/// With `selection == None` every word on either side is compared on all
/// three attributes and both sides must hold the same words. Otherwise only
/// the selected cells are compared and each must exist on both sides.
pub fn mitigation_delta(
    ori: &[WordBiasScore],
    miti: &[WordBiasScore],
    selection: Option<&[MitigationKey]>,
) -> Result<MitigationComparison, ScoringError> {
    let ori_idx = index(ori);
    let miti_idx = index(miti);

    let keys: Vec<MitigationKey> = match selection {
        Some(sel) => sel.to_vec(),
        None => {
            let a: BTreeSet<_> = ori_idx.keys().collect();
            let b: BTreeSet<_> = miti_idx.keys().collect();
            if let Some((m, d, w)) = a.symmetric_difference(&b).next() {
                return Err(ScoringError::KeyMismatch(format!("{m}/{d}/{w}")));
            }
            a.into_iter()
                .flat_map(|(m, d, w)| {
                    Attribute::ALL.into_iter().map(move |attribute| MitigationKey {
                        model_id: m.clone(),
                        domain: *d,
                        word: w.clone(),
                        attribute,
                    })
                })
                .collect()
        }
    };

    let mut rows = Vec::with_capacity(keys.len());
    for key in keys {
        let k = (key.model_id.clone(), key.domain, key.word.clone());
        let missing =
            || ScoringError::KeyMismatch(format!("{}/{}/{}/{}", key.model_id, key.domain, key.word, key.attribute));
        let o = ori_idx.get(&k).ok_or_else(missing)?;
        let m = miti_idx.get(&k).ok_or_else(missing)?;
        rows.push(MitigationRow {
            ori: o.get(key.attribute),
            miti: m.get(key.attribute),
            model_id: key.model_id,
            domain: key.domain,
            word: key.word,
            attribute: key.attribute,
        });
    }

    let mut per_model: BTreeMap<&str, Vec<&MitigationRow>> = BTreeMap::new();
    for r in &rows {
        per_model.entry(&r.model_id).or_default().push(r);
    }
    let summaries = per_model
        .into_iter()
        .map(|(model_id, rs)| {
            let abs_mean = |f: fn(&MitigationRow) -> f64| {
                let v: Vec<_> = rs.iter().map(|r| exact::exact(f(r))).collect();
                exact::to_f64(&exact::abs_mean(&v).expect("non-empty"))
            };
            MitigationSummary {
                model_id: model_id.to_string(),
                n_cells: rs.len(),
                ori: abs_mean(|r| r.ori),
                miti: abs_mean(|r| r.miti),
            }
        })
        .collect();

    Ok(MitigationComparison { rows, summaries })
}

/// The most positive and most negative original word per attribute for one
/// model and domain (up to six cells). Ties go to the lexicographically
/// smaller word.
pub fn table_cells(ori: &[WordBiasScore], model_id: &str, domain: Domain) -> Vec<MitigationKey> {
    let words: Vec<&WordBiasScore> = ori.iter().filter(|w| w.model_id == model_id && w.domain == domain).collect();
    let mut keys = Vec::new();
    for attribute in Attribute::ALL {
        let best = |sign: f64| {
            words
                .iter()
                .filter(|w| w.get(attribute) * sign > 0.0)
                .min_by(|a, b| {
                    (b.get(attribute) * sign).total_cmp(&(a.get(attribute) * sign)).then_with(|| a.word.cmp(&b.word))
                })
                .map(|w| MitigationKey { model_id: model_id.to_string(), domain, word: w.word.clone(), attribute })
        };
        keys.extend(best(1.0));
        keys.extend(best(-1.0));
    }
    keys
}
