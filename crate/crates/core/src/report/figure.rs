//! Word-score strip plots as standalone SVG.

use std::fmt::Write;

use crate::corpus::Domain;
use crate::scoring::{Attribute, WordBiasScore};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 370.0;
const COLUMN_X: [f64; 3] = [160.0, 320.0, 480.0];
const PALETTE: [&str; 3] = ["#1b9e77", "#d95f02", "#7570b3"];

/// Points of one column: `(word, score)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub attribute: Attribute,
    pub points: Vec<(String, f64)>,
}

/// Input of [`distribution_figure`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub title: String,
    pub columns: Vec<Column>,
}

impl Distribution {
    /// Age, race and gender columns for one model, variant and domain.
    pub fn from_words(words: &[WordBiasScore], model_id: &str, domain: Domain) -> Self {
        let mut ws: Vec<&WordBiasScore> =
            words.iter().filter(|w| w.model_id == model_id && w.domain == domain).collect();
        ws.sort_by(|a, b| a.word.cmp(&b.word));
        let columns = [Attribute::Age, Attribute::Race, Attribute::Gender]
            .into_iter()
            .map(|attribute| Column {
                attribute,
                points: ws.iter().map(|w| (w.word.clone(), w.get(attribute))).collect(),
            })
            .collect();
        Self { title: format!("{model_id} / {domain} word bias scores"), columns }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Symmetric vertical extent: the largest magnitude rounded up to a half,
/// at least 1.
fn extent(d: &Distribution) -> f64 {
    let m = d.columns.iter().flat_map(|c| c.points.iter().map(|p| p.1.abs())).fold(1.0f64, f64::max);
    (m * 2.0).ceil() / 2.0
}

/// Vertical position of `v` for the given extent.
pub fn y_of(v: f64, extent: f64) -> f64 {
    let mid = (TOP + BOTTOM) / 2.0;
    mid - v / extent * (BOTTOM - TOP) / 2.0
}

/// Strip plot: one column per attribute, one circle per word with the word
/// and score in a `<title>`, and a zero line. Output depends only on input.
pub fn distribution_figure(d: &Distribution) -> String {
    let ext = extent(d);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(&d.title)
    );
    for v in [-ext, -ext / 2.0, 0.0, ext / 2.0, ext] {
        let y = y_of(v, ext);
        let _ = writeln!(s, r#"<text x="60" y="{:.2}" text-anchor="end" dominant-baseline="middle">{v:.2}</text>"#, y);
        let _ = writeln!(s, r##"<line x1="66" y1="{y:.2}" x2="600" y2="{y:.2}" stroke="#eeeeee"/>"##);
    }
    let zero = y_of(0.0, ext);
    let _ = writeln!(
        s,
        r##"<line class="zero" x1="66" y1="{zero:.2}" x2="600" y2="{zero:.2}" stroke="#444444" stroke-width="1.5"/>"##
    );

    for (i, col) in d.columns.iter().enumerate() {
        let cx = COLUMN_X[i % COLUMN_X.len()];
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="column" data-attribute="{}">"#, col.attribute);
        let _ = writeln!(s, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, BOTTOM + 28.0, col.attribute);
        if col.points.is_empty() {
            let _ = writeln!(
                s,
                r##"<text class="no-data" x="{cx}" y="{zero:.2}" text-anchor="middle" fill="#888888">no data</text>"##
            );
        }
        for (k, (word, v)) in col.points.iter().enumerate() {
            let x = cx + ((k % 9) as f64 - 4.0) * 7.0;
            let y = y_of(*v, ext);
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}" fill-opacity="0.75"><title>{}: {v}</title></circle>"#,
                escape(word)
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
