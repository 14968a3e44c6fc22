//! Seed portraits and the neutral prompt list.
//!
//! Seeds are labeled portraits spread evenly over the 18 demographic groups
//! (3 races x 2 genders x 3 age bands). Prompts are rendered from a word
//! lexicon after dropping words whose mean annotator relevance to
//! gender/race/age is above the cutoff.

mod lexicon;
mod manifest;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{filter_lexicon, load_lexicon, parse_lexicon, Article, LexiconEntry, RELEVANCE_CUTOFF};
pub use manifest::{load_seed_manifest, load_seed_manifest_with, write_seed_manifest, Coverage};
pub use prompt::{build_prompt, build_prompt_list, build_prompt_with_article, Prompt, PromptList, PromptSummary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest {path}, line {line}: {reason}")]
    MalformedManifest { path: PathBuf, line: u64, reason: String },
    #[error("group {group} has {found} seeds, expected {expected}")]
    GroupImbalance { group: DemographicGroup, found: usize, expected: usize },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("duplicate seed id {0:?}")]
    DuplicateSeedId(String),
    #[error("group {group} has {available} candidates, need {needed}")]
    InsufficientGroupCandidates { group: DemographicGroup, available: usize, needed: usize },
    #[error("per-group count must be positive")]
    ZeroPerGroup,
    #[error("malformed lexicon line {line}: {reason}")]
    MalformedLexicon { line: u64, reason: String },
    #[error("empty word")]
    EmptyWord,
    #[error("word {word:?} appears twice in domain {domain}")]
    DuplicateWordInDomain { word: String, domain: Domain },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Error for unknown enum tokens in manifests and config.
#[derive(Debug, Error)]
#[error("unknown {kind} {value:?}")]
pub struct ParseEnumError {
    kind: &'static str,
    value: String,
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = ParseEnumError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($label) {
                    return Ok($name::$variant);
                })+
                Err(ParseEnumError { kind: $kind, value: s.to_string() })
            }
        }
    };
}

label_enum!(Race, "race", {
    White => "white",
    Black => "black",
    EastAsian => "east_asian",
});

label_enum!(Gender, "gender", {
    Male => "male",
    Female => "female",
});

label_enum!(AgeBand, "age band", {
    YoungAdult => "young_adult",
    MiddleAged => "middle_aged",
    Elderly => "elderly",
});

label_enum!(
    /// Word domains of the neutral prompt list.
    Domain, "domain", {
    Activity => "activity",
    Object => "object",
    Personality => "personality",
    Profession => "profession",
});

impl Gender {
    pub fn flipped(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemographicGroup {
    pub race: Race,
    pub gender: Gender,
    pub age_band: AgeBand,
}

impl DemographicGroup {
    pub const COUNT: usize = 18;

    pub fn new(race: Race, gender: Gender, age_band: AgeBand) -> Self {
        Self { race, gender, age_band }
    }

    /// All groups in canonical order (race, then gender, then age band).
    pub fn all() -> Vec<DemographicGroup> {
        let mut out = Vec::with_capacity(Self::COUNT);
        for &race in Race::ALL {
            for &gender in Gender::ALL {
                for &age_band in AgeBand::ALL {
                    out.push(Self { race, gender, age_band });
                }
            }
        }
        out
    }
}

impl fmt::Display for DemographicGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.race, self.gender, self.age_band)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedImage {
    pub id: String,
    pub image_path: PathBuf,
    pub group: DemographicGroup,
    pub source_tag: String,
}

/// A demographically balanced set of seed portraits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    seeds: Vec<SeedImage>,
    per_group_count: usize,
}

impl SeedSet {
    /// Validates that all 18 groups appear the same positive number of times.
    pub fn new(seeds: Vec<SeedImage>) -> Result<Self, CorpusError> {
        Self::with_coverage(seeds, Coverage::Full)
    }

    /// Like [`SeedSet::new`], but with [`Coverage::Partial`] only the groups
    /// that appear at all must be balanced. Small fixtures use this.
    pub fn with_coverage(seeds: Vec<SeedImage>, coverage: Coverage) -> Result<Self, CorpusError> {
        let mut ids = std::collections::HashSet::new();
        for seed in &seeds {
            if !ids.insert(seed.id.as_str()) {
                return Err(CorpusError::DuplicateSeedId(seed.id.clone()));
            }
        }

        let mut counts: BTreeMap<DemographicGroup, usize> = BTreeMap::new();
        for seed in &seeds {
            *counts.entry(seed.group).or_default() += 1;
        }
        let expected = counts.values().copied().max().unwrap_or(0);
        if expected == 0 {
            return Err(CorpusError::ZeroPerGroup);
        }
        let groups = match coverage {
            Coverage::Full => DemographicGroup::all(),
            Coverage::Partial => counts.keys().copied().collect(),
        };
        for group in groups {
            let found = counts.get(&group).copied().unwrap_or(0);
            if found != expected {
                return Err(CorpusError::GroupImbalance { group, found, expected });
            }
        }
        Ok(Self { seeds, per_group_count: expected })
    }

    pub fn seeds(&self) -> &[SeedImage] {
        &self.seeds
    }

    pub fn per_group_count(&self) -> usize {
        self.per_group_count
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SeedImage> {
        self.seeds.iter().find(|s| s.id == id)
    }
}

/// Draws `per_group` candidates uniformly without replacement from each of
/// the 18 groups. Groups are visited in canonical order and candidates keep
/// their order from `corpus_index`, so the result is a pure function of the
/// arguments. Seed ids are the file stems of the chosen images.
pub fn sample_seed_set(
    corpus_index: &[(PathBuf, DemographicGroup)],
    per_group: usize,
    rng_seed: u64,
) -> Result<SeedSet, CorpusError> {
    if per_group == 0 {
        return Err(CorpusError::ZeroPerGroup);
    }
    let mut by_group: BTreeMap<DemographicGroup, Vec<&PathBuf>> = BTreeMap::new();
    for (path, group) in corpus_index {
        by_group.entry(*group).or_default().push(path);
    }

    let mut rng = crate::sampling::run_rng(rng_seed);
    let mut seeds = Vec::with_capacity(per_group * DemographicGroup::COUNT);
    for group in DemographicGroup::all() {
        let candidates = by_group.get(&group).map(Vec::as_slice).unwrap_or(&[]);
        if candidates.len() < per_group {
            return Err(CorpusError::InsufficientGroupCandidates {
                group,
                available: candidates.len(),
                needed: per_group,
            });
        }
        for idx in crate::sampling::draw_indices(&mut rng, candidates.len(), per_group) {
            let path = candidates[idx].clone();
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.to_string_lossy().into_owned());
            seeds.push(SeedImage { id, image_path: path, group, source_tag: "sampled".into() });
        }
    }
    SeedSet::new(seeds)
}
