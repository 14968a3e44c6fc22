//! Sampling scored pairs for human review.

use serde::{Deserialize, Serialize};

use super::{Attribute, PairScore, ScoringError};
use crate::sampling::{draw_indices, run_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

/// Score interval; a missing bound is unbounded on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
}

impl Band {
    pub fn new(name: impl Into<String>, lower: Option<Bound>, upper: Option<Bound>) -> Self {
        Self { name: name.into(), lower, upper }
    }

    pub fn above(name: &str, value: f64) -> Self {
        Self::new(name, Some(Bound { value, inclusive: false }), None)
    }

    pub fn below(name: &str, value: f64) -> Self {
        Self::new(name, None, Some(Bound { value, inclusive: false }))
    }

    pub fn open(name: &str, lo: f64, hi: f64) -> Self {
        Self::new(name, Some(Bound { value: lo, inclusive: false }), Some(Bound { value: hi, inclusive: false }))
    }

    pub fn exactly(name: &str, value: f64) -> Self {
        let b = Some(Bound { value, inclusive: true });
        Self::new(name, b, b)
    }

    /// Increase / decrease / no-change bands. Age and race use `> 1`,
    /// `< -1` and `(-0.2, 0.2)`; gender uses the exact values.
    pub fn defaults(attribute: Attribute) -> Vec<Band> {
        match attribute {
            Attribute::Gender => vec![
                Band::exactly("male_to_female", 1.0),
                Band::exactly("female_to_male", -1.0),
                Band::exactly("unchanged", 0.0),
            ],
            Attribute::Age => {
                vec![Band::above("older", 1.0), Band::below("younger", -1.0), Band::open("unchanged", -0.2, 0.2)]
            }
            Attribute::Race => {
                vec![Band::above("lighter", 1.0), Band::below("darker", -1.0), Band::open("unchanged", -0.2, 0.2)]
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let lo_ok = self.lower.is_none_or(|b| if b.inclusive { x >= b.value } else { x > b.value });
        let hi_ok = self.upper.is_none_or(|b| if b.inclusive { x <= b.value } else { x < b.value });
        lo_ok && hi_ok
    }

    fn overlaps(&self, other: &Band) -> bool {
        // greatest lower bound and least upper bound of the intersection
        let lo = match (self.lower, other.lower) {
            (None, b) | (b, None) => b,
            (Some(a), Some(b)) if a.value > b.value => Some(a),
            (Some(a), Some(b)) if b.value > a.value => Some(b),
            (Some(a), Some(b)) => Some(Bound { value: a.value, inclusive: a.inclusive && b.inclusive }),
        };
        let hi = match (self.upper, other.upper) {
            (None, b) | (b, None) => b,
            (Some(a), Some(b)) if a.value < b.value => Some(a),
            (Some(a), Some(b)) if b.value < a.value => Some(b),
            (Some(a), Some(b)) => Some(Bound { value: a.value, inclusive: a.inclusive && b.inclusive }),
        };
        match (lo, hi) {
            (Some(l), Some(h)) => l.value < h.value || (l.value == h.value && l.inclusive && h.inclusive),
            _ => true,
        }
    }
}

/// Draws `counts[i]` pair ids uniformly without replacement from the pairs
/// whose `attribute` score falls in `bands[i]`. Bands are drawn in order
/// from one generator seeded with `rng_seed`.
pub fn select_annotation_candidates(
    pairs: &[PairScore],
    attribute: Attribute,
    bands: &[Band],
    counts: &[usize],
    rng_seed: u64,
) -> Result<Vec<Vec<String>>, ScoringError> {
    if bands.len() != counts.len() {
        return Err(ScoringError::BandCountMismatch(bands.len(), counts.len()));
    }
    for (i, a) in bands.iter().enumerate() {
        for b in &bands[i + 1..] {
            if a.overlaps(b) {
                return Err(ScoringError::OverlappingBands(a.name.clone(), b.name.clone()));
            }
        }
    }

    let mut rng = run_rng(rng_seed);
    let mut out = Vec::with_capacity(bands.len());
    for (band, &count) in bands.iter().zip(counts) {
        let members: Vec<&PairScore> = pairs.iter().filter(|p| band.contains(p.scores().get(attribute))).collect();
        if members.len() < count {
            return Err(ScoringError::InsufficientBandPopulation(band.name.clone(), members.len(), count));
        }
        out.push(
            draw_indices(&mut rng, members.len(), count).into_iter().map(|i| members[i].pair_id.clone()).collect(),
        );
    }
    Ok(out)
}
