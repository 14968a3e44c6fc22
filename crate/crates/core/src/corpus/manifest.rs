//! Seed manifest CSV: `id,path,race,gender,age_band,source`.
//!
//! Relative image paths resolve against the manifest's directory.

use std::fs::File;
use std::path::{Path, PathBuf};

use super::{AgeBand, CorpusError, DemographicGroup, Gender, Race, SeedImage, SeedSet};

const HEADER: [&str; 6] = ["id", "path", "race", "gender", "age_band", "source"];

/// Which demographic groups a seed set must cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coverage {
    /// All 18 groups, equally often.
    #[default]
    Full,
    /// Any subset of groups, each present group equally often.
    Partial,
}

pub fn load_seed_manifest(path: &Path) -> Result<SeedSet, CorpusError> {
    load_seed_manifest_with(path, Coverage::Full)
}

pub fn load_seed_manifest_with(path: &Path, coverage: Coverage) -> Result<SeedSet, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let malformed =
        |line: u64, reason: String| CorpusError::MalformedManifest { path: path.to_path_buf(), line, reason };

    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(File::open(path)?);
    let mut records = reader.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "empty manifest".into())),
    };
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(malformed(1, format!("expected header {}", HEADER.join(","))));
    }

    let mut seeds = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != HEADER.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", HEADER.len(), rec.len())));
        }
        let field = |i: usize| -> Result<&str, CorpusError> {
            let v = &rec[i];
            if v.is_empty() && i < 5 {
                Err(malformed(line, format!("blank {}", HEADER[i])))
            } else {
                Ok(v)
            }
        };
        let race: Race = field(2)?.parse().map_err(|e| malformed(line, format!("{e}")))?;
        let gender: Gender = field(3)?.parse().map_err(|e| malformed(line, format!("{e}")))?;
        let age_band: AgeBand = field(4)?.parse().map_err(|e| malformed(line, format!("{e}")))?;
        let rel = PathBuf::from(field(1)?);
        let image_path = if rel.is_absolute() { rel } else { base.join(rel) };
        seeds.push(SeedImage {
            id: field(0)?.to_string(),
            image_path,
            group: DemographicGroup { race, gender, age_band },
            source_tag: rec[5].to_string(),
        });
    }
    if seeds.is_empty() {
        return Err(malformed(1, "manifest has no rows".into()));
    }

    let set = SeedSet::with_coverage(seeds, coverage)?;
    for seed in set.seeds() {
        image::open(&seed.image_path)
            .map_err(|e| CorpusError::UnreadableImage { path: seed.image_path.clone(), reason: e.to_string() })?;
    }
    Ok(set)
}

/// Writes `set` as a manifest. Image paths under the manifest's directory
/// are written relative to it.
pub fn write_seed_manifest(set: &SeedSet, path: &Path) -> Result<(), CorpusError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
    writer.write_record(HEADER).map_err(csv_io)?;
    for seed in set.seeds() {
        let shown = seed.image_path.strip_prefix(base).unwrap_or(&seed.image_path);
        writer
            .write_record([
                seed.id.as_str(),
                &shown.to_string_lossy(),
                seed.group.race.label(),
                seed.group.gender.label(),
                seed.group.age_band.label(),
                seed.source_tag.as_str(),
            ])
            .map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn png(dir: &Path, name: &str) {
        image::RgbImage::from_pixel(4, 4, image::Rgb([120, 100, 90])).save(dir.join(name)).unwrap();
    }

    fn write_manifest(dir: &Path, rows: &[String]) -> PathBuf {
        let path = dir.join("seeds.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "id,path,race,gender,age_band,source").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        path
    }

    fn full_rows(dir: &Path, per_group: usize) -> Vec<String> {
        let mut rows = Vec::new();
        for (g, group) in DemographicGroup::all().into_iter().enumerate() {
            for k in 0..per_group {
                let name = format!("s{g}_{k}.png");
                png(dir, &name);
                rows.push(format!("s{g}_{k},{name},{},{},{},test", group.race, group.gender, group.age_band));
            }
        }
        rows
    }

    #[test]
    fn fifty_four_rows_load() {
        let dir = tempfile::tempdir().unwrap();
        let rows = full_rows(dir.path(), 3);
        let set = load_seed_manifest(&write_manifest(dir.path(), &rows)).unwrap();
        assert_eq!(set.len(), 54);
        assert_eq!(set.per_group_count(), 3);
        assert!(set.seeds()[0].image_path.is_absolute() || set.seeds()[0].image_path.starts_with(dir.path()));
    }

    #[test]
    fn empty_manifest_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_seed_manifest(&write_manifest(dir.path(), &[])).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedManifest { .. }), "{err}");
    }

    #[test]
    fn imbalance_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path(), "a.png");
        let mut rows = Vec::new();
        for i in 0..4 {
            rows.push(format!("wm{i},a.png,white,male,elderly,x"));
        }
        for i in 0..2 {
            rows.push(format!("wf{i},a.png,white,female,elderly,x"));
        }
        let err = load_seed_manifest_with(&write_manifest(dir.path(), &rows), Coverage::Partial).unwrap_err();
        match err {
            CorpusError::GroupImbalance { group, found: 2, expected: 4 } => {
                assert_eq!(group.gender, Gender::Female)
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_enum_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path(), "a.png");
        let rows = vec!["ok,a.png,white,male,elderly,x".to_string(), "bad,a.png,green,male,elderly,x".to_string()];
        match load_seed_manifest(&write_manifest(dir.path(), &rows)).unwrap_err() {
            CorpusError::MalformedManifest { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_and_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_seed_manifest(&dir.path().join("nope.csv")), Err(CorpusError::MissingFile(_))));
        std::fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
        let rows = vec!["j,junk.png,white,male,elderly,x".to_string()];
        assert!(matches!(
            load_seed_manifest_with(&write_manifest(dir.path(), &rows), Coverage::Partial),
            Err(CorpusError::UnreadableImage { .. })
        ));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let rows = full_rows(dir.path(), 1);
        let path = write_manifest(dir.path(), &rows);
        let set = load_seed_manifest(&path).unwrap();
        let out = dir.path().join("copy.csv");
        write_seed_manifest(&set, &out).unwrap();
        assert_eq!(load_seed_manifest(&out).unwrap(), set);
    }
}
