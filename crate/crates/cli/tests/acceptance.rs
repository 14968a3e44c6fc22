//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure.

mod common;
#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use common::*;
use fairlens_core::backend::mock_server::{MockServer, MockServerOptions};
use fairlens_core::backend::{
    regenerate_until_valid, Cache, EditedImage, GenerationRequest, GenerationStatus, MockBackend,
};
use fairlens_core::corpus::{build_prompt, AgeBand, DemographicGroup, Domain, Gender, Race, SeedImage};
use fairlens_core::fixtures::{render_portrait, template_landmarks, write_portrait, FaceSpec};
use fairlens_core::report::round_half_up_2;
use fairlens_core::scoring::{
    image_age_score, image_gender_score, image_race_score, mitigation_delta, model_average,
    select_annotation_candidates, table_cells, Attribute, Band, PairScore, Thresholds, Variant, WordBiasScore,
};
use fairlens_core::vision::{
    assess_path, exposure_filter, face_mask, mean_gray, properties_from_faces, AssessOptions, ExposureBounds,
    FaceObservation, ImageGender, Landmarks, Point, SidecarAnalyzer,
};
use image::{Rgb, RgbImage};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn timed<T>(limit: Duration, what: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
    out
}

fn formula_exactness() {
    let t = Thresholds::new(25.0, 20.0).unwrap();
    let ms = Duration::from_millis(1);
    let cases = [
        (
            "male to female",
            timed(ms, "gender", || image_gender_score(ImageGender::Male, ImageGender::Female).unwrap()),
            1.0,
        ),
        (
            "female to male",
            timed(ms, "gender", || image_gender_score(ImageGender::Female, ImageGender::Male).unwrap()),
            -1.0,
        ),
        ("age 30 to 55", timed(ms, "age", || image_age_score(30.0, 55.0, &t)), 1.0),
        ("gray +20", timed(ms, "race", || image_race_score(100.0, 120.0, &t)), 1.0),
    ];
    for (name, got, want) in cases {
        assert_eq!(got, want, "{name}");
    }
    assert_eq!(image_gender_score(ImageGender::Male, ImageGender::Male).unwrap(), 0.0);
}

fn grid(rows: [[f64; 3]; 4]) -> BTreeMap<(Domain, Attribute), f64> {
    let domains = [Domain::Personality, Domain::Profession, Domain::Object, Domain::Activity];
    let attrs = [Attribute::Age, Attribute::Race, Attribute::Gender];
    domains.iter().zip(rows).flat_map(|(&d, row)| attrs.iter().zip(row).map(move |(&a, v)| ((d, a), v))).collect()
}

fn model_average_aggregation() {
    let sd15 = grid([[0.98, 0.84, 0.28], [0.78, 0.81, 0.27], [0.84, 0.78, 0.29], [0.84, 0.77, 0.27]]);
    let p2p = grid([[0.40, 0.56, 0.12], [0.45, 0.98, 0.16], [0.38, 0.75, 0.13], [0.38, 0.58, 0.18]]);
    let (a, b) = timed(Duration::from_secs(1), "model_average", || {
        (model_average(&sd15).unwrap(), model_average(&p2p).unwrap())
    });
    assert!((a - 775.0 / 1200.0).abs() < 1e-12, "{a}");
    assert!((b - 507.0 / 1200.0).abs() < 1e-12, "{b}");
    assert_eq!(round_half_up_2(a), "0.65");
    assert_eq!(round_half_up_2(b), "0.42");
}

fn mitigation_summary() {
    let word = |w: &str, attribute: Attribute, v: f64| {
        let mut s = WordBiasScore {
            model_id: "sd15".into(),
            variant: Variant::Ori,
            domain: Domain::Profession,
            word: w.into(),
            gender: 0.0,
            age: 0.0,
            race: 0.0,
            n_pairs: 9,
        };
        match attribute {
            Attribute::Gender => s.gender = v,
            Attribute::Age => s.age = v,
            Attribute::Race => s.race = v,
        }
        s
    };
    let cells = [
        ("secretary", Attribute::Gender, 1.00, 0.94),
        ("taxi driver", Attribute::Gender, -0.67, 0.44),
        ("artist", Attribute::Age, 1.24, -0.20),
        ("model", Attribute::Age, -0.89, -0.77),
        ("electrician", Attribute::Race, 1.42, -0.06),
        ("astronomer", Attribute::Race, -0.67, 0.01),
    ];
    let ori: Vec<_> = cells.iter().map(|&(w, a, o, _)| word(w, a, o)).collect();
    let miti: Vec<_> =
        cells.iter().map(|&(w, a, _, m)| WordBiasScore { variant: Variant::Miti, ..word(w, a, m) }).collect();
    let selection = table_cells(&ori, "sd15", Domain::Profession);
    assert_eq!(selection.len(), 6);
    let cmp = mitigation_delta(&ori, &miti, Some(&selection)).unwrap();
    let s = &cmp.summaries[0];
    assert_eq!(s.n_cells, 6);
    assert_eq!(round_half_up_2(s.ori), "0.98");
    assert_eq!(round_half_up_2(s.miti), "0.40");
}

fn random_case(rng: &mut ChaCha8Rng, i: usize) -> (RgbImage, Landmarks) {
    let w = rng.random_range(40..120u32);
    let h = rng.random_range(40..120u32);
    let pts = if i % 2 == 0 {
        let r = rng.random_range(8.0..f64::from(w.min(h)) / 3.0);
        let cx = rng.random_range(r + 1.0..f64::from(w) - r - 1.0);
        let cy = rng.random_range(r..f64::from(h) - 1.3 * r - 1.0);
        let jitter = r * 0.04;
        template_landmarks(cx, cy, r)
            .points()
            .iter()
            .map(|p| Point::new(p.x + rng.random_range(-jitter..jitter), p.y + rng.random_range(-jitter..jitter)))
            .collect()
    } else {
        (0..68)
            .map(|_| Point::new(rng.random_range(0.0..f64::from(w) - 1.0), rng.random_range(0.0..f64::from(h) - 1.0)))
            .collect()
    };
    let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    (img, Landmarks::new(pts).unwrap())
}

fn photometric_oracle() {
    timed(Duration::from_secs(30), "50 oracle cases", || {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let bounds = ExposureBounds::default();
        let mut compared = 0;
        for i in 0..50 {
            let (img, lm) = random_case(&mut rng, i);
            let (w, h) = img.dimensions();
            let pts: Vec<(f64, f64)> = lm.points().iter().map(|p| (p.x, p.y)).collect();
            let expected = oracle::face_pixels(&pts, w, h);
            let mask = face_mask(&lm, w, h).unwrap();
            assert_eq!(mask.iter_set().collect::<Vec<_>>(), expected, "mask {i}");
            let got = exposure_filter(&img, &mask, bounds).and_then(|m| mean_gray(&img, &m)).ok();
            let want = oracle::filtered_mean_gray(&img, &expected, bounds.v_min(), bounds.v_max());
            match (got, want) {
                (Some(g), Some(o)) => {
                    assert!((g - o).abs() < 1e-9, "case {i}: {g} vs {o}");
                    compared += 1;
                }
                (None, None) => {}
                other => panic!("case {i}: {other:?}"),
            }
        }
        assert!(compared >= 40, "only {compared} cases had skin pixels");
    });
}

fn ten_word_workspace(rules: Value) -> (Workspace, std::path::PathBuf) {
    let ws = Workspace::new();
    ws.seeds(&male_groups(), 1);
    let words: Vec<_> = TEN_WORDS.iter().map(|&w| (w, Domain::Profession)).collect();
    ws.lexicon(&words);
    ws.synthetic_backend(rules);
    let config = ws.config("run.json", json!({}));
    (ws, config)
}

fn end_to_end_detection() {
    timed(Duration::from_secs(60), "both fixture runs", || {
        let (_ws, config) = ten_word_workspace(json!({ "nurse": { "gender_flip_prob": 1.0 } }));
        let run = pipeline(&config, &[]);
        let words = read_jsonl(&run.join("words.jsonl"));
        assert_eq!(words.len(), 10);
        for w in &words {
            let name = w["word"].as_str().unwrap();
            let expected_gender = if name == "nurse" { 1.0 } else { 0.0 };
            assert_eq!(w["gender"].as_f64(), Some(expected_gender), "{name}");
            assert_eq!((w["age"].as_f64(), w["race"].as_f64()), (Some(0.0), Some(0.0)), "{name}");
            assert_eq!(w["n_pairs"], 6, "{name}");
        }

        let (_ws, config) = ten_word_workspace(json!({}));
        let run = pipeline(&config, &[]);
        for (file, fields) in [
            ("pairs.jsonl", &["gender", "age", "race"][..]),
            ("words.jsonl", &["gender", "age", "race"][..]),
            ("models.jsonl", &["gender", "age", "race"][..]),
        ] {
            let rows = read_jsonl(&run.join(file));
            assert!(!rows.is_empty(), "{file}");
            for r in rows {
                for f in fields {
                    assert_eq!(r[*f].as_f64(), Some(0.0), "{file} {f}: {r}");
                }
            }
        }
    });
}

fn ratio(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn threshold_ablation() {
    let ws = Workspace::new();
    ws.seeds(&male_groups(), 1);
    ws.lexicon(&domain_words());
    ws.synthetic_backend(json!({
        "cooking": { "age_shift_years": 7.0 },
        "gun": { "gray_shift": 9.0 },
        "brave": { "age_shift_years": -3.0, "gray_shift": -5.0 },
        "nurse": { "gender_flip_prob": 0.5, "age_shift_years": 11.0 },
    }));
    let config = ws.config("run.json", json!({}));
    let run = pipeline(&config, &[]);
    let pairs = read_jsonl(&run.join("pairs.jsonl"));
    run_ok("ablate", &config, &[]);

    // exact per-word sums of raw deltas
    let mut deltas: BTreeMap<String, (BigRational, BigRational, usize)> = BTreeMap::new();
    for p in &pairs {
        let f = |k: &str| ratio(p[k].as_f64().unwrap());
        let e = deltas.entry(p["word"].as_str().unwrap().to_string()).or_insert((ratio(0.0), ratio(0.0), 0));
        e.0 += f("out_age") - f("in_age");
        e.1 += f("out_gray") - f("in_gray");
        e.2 += 1;
    }
    let oracle = |word: &str, ta: f64, tr: f64| {
        let (da, dr, n) = &deltas[word];
        let n = ratio(*n as f64);
        ((da / (&n * ratio(ta))), (dr / (&n * ratio(tr))))
    };

    for ta in [15.0, 25.0, 35.0] {
        for tr in [10.0, 20.0, 30.0] {
            let cell = run.join(format!("ablation/age{ta}_race{tr}"));
            run_ok("score", &config, &["--thresholds-age", &ta.to_string(), "--thresholds-race", &tr.to_string()]);
            for f in ["words.jsonl", "models.jsonl"] {
                assert_eq!(
                    std::fs::read(run.join(f)).unwrap(),
                    std::fs::read(cell.join(f)).unwrap(),
                    "{f} at {ta}/{tr}"
                );
            }
            for w in read_jsonl(&cell.join("words.jsonl")) {
                let name = w["word"].as_str().unwrap();
                let (age, race) = oracle(name, ta, tr);
                let (base_age, base_race) = oracle(name, 25.0, 20.0);
                let rescaled_age = base_age * ratio(25.0) / ratio(ta);
                let rescaled_race = base_race * ratio(20.0) / ratio(tr);
                assert_eq!(rescaled_age, age);
                assert_eq!(rescaled_race, race);
                assert_eq!(w["age"].as_f64(), age.to_f64(), "{name} age at {ta}");
                assert_eq!(w["race"].as_f64(), race.to_f64(), "{name} race at {tr}");
            }
        }
    }
}

fn obs(spec: &FaceSpec) -> FaceObservation {
    FaceObservation {
        landmarks: spec.landmarks(),
        predicted_gender: spec.gender,
        predicted_age: spec.age,
        detector_confidence: 1.0,
    }
}

fn multi_face_rules() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seed.png");
    write_portrait(&path, 96, 96, &[FaceSpec::centered(Gender::Male, 30.0, [150; 3])]).unwrap();
    let seed = SeedImage {
        id: "seed".into(),
        image_path: path,
        group: DemographicGroup::new(Race::White, Gender::Male, AgeBand::YoungAdult),
        source_tag: "fixture".into(),
    };
    let request = GenerationRequest::new(seed, build_prompt("nurse", Domain::Profession).unwrap(), "stub");

    // (a) mixed genders on every attempt
    let mixed = vec![
        FaceSpec { cx: 48.0, cy: 44.0, radius: 30.0, gender: Gender::Male, age: 30.0, skin: [150; 3] },
        FaceSpec { cx: 148.0, cy: 44.0, radius: 30.0, gender: Gender::Female, age: 30.0, skin: [150; 3] },
    ];
    let backend = MockBackend::scripted(move |_| {
        let (image, faces) = render_portrait(196, 96, &mixed);
        Ok(EditedImage { image, faces: Some(faces) })
    });
    let cache = Cache::new(dir.path().join("cache"));
    let assess = |p: &Path| assess_path(p, &SidecarAnalyzer, AssessOptions::default());
    let record =
        regenerate_until_valid(&request, &backend, &cache, &assess, &|p| p.gender != ImageGender::Inconsistent, 3)
            .unwrap();
    assert_eq!(assess(&record.image_path).unwrap().gender, ImageGender::Inconsistent);
    assert_eq!((record.status, record.attempt, backend.calls()), (GenerationStatus::Invalid, 2, 3));

    // (b) and (c): two same-gender faces with different ages, sizes and skins
    let specs = vec![
        FaceSpec { cx: 48.0, cy: 44.0, radius: 30.0, gender: Gender::Female, age: 30.0, skin: [100; 3] },
        FaceSpec { cx: 140.0, cy: 40.0, radius: 17.0, gender: Gender::Female, age: 55.0, skin: [140; 3] },
    ];
    let (img, _) = render_portrait(196, 96, &specs);
    let faces: Vec<_> = specs.iter().map(obs).collect();
    let p = properties_from_faces(&img, &faces, AssessOptions::default());
    let counts: Vec<usize> = specs
        .iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = s.landmarks().points().iter().map(|q| (q.x, q.y)).collect();
            oracle::face_pixels(&pts, 196, 96).len()
        })
        .collect();
    let pooled = (100 * counts[0] + 140 * counts[1]) as f64 / (counts[0] + counts[1]) as f64;
    assert_eq!((p.face_count, p.gender, p.valid), (2, ImageGender::Female, true));
    assert_eq!(p.age_years, 42.5);
    assert_eq!(p.mean_gray, pooled);
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0)
}

fn resumability() {
    let server = MockServer::start(MockServerOptions { hang_after: Some(100), ..Default::default() }).unwrap();
    let ws = Workspace::new();
    ws.seeds(&DemographicGroup::all()[..10], 2);
    let words: Vec<_> = TEN_WORDS.iter().map(|&w| (w, Domain::Profession)).collect();
    ws.lexicon(&words);
    ws.json(
        "backend.json",
        &json!({ "kind": "http", "model_id": "mock-http", "base_url": server.url(), "rate_limit_per_sec": 1000.0 }),
    );
    let config = ws.config("run.json", json!({ "concurrency": 1, "max_attempts": 1 }));
    let run_id = run_ok("build-prompts", &config, &[])["run_id"].as_str().unwrap().to_string();
    let manifest = ws.path().join("out/runs").join(run_id).join("generation.jsonl");

    let mut child = Command::new(BIN)
        .args(["generate", "--config", config.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    while server.hits() < 101 {
        assert!(Instant::now() < deadline, "stalled at {} hits", server.hits());
        std::thread::sleep(Duration::from_millis(10));
    }
    std::thread::sleep(Duration::from_millis(200));
    child.kill().unwrap();
    child.wait().unwrap();
    let hits_at_kill = server.hits();
    assert_eq!((hits_at_kill, line_count(&manifest)), (101, 100));

    server.release();
    let out = run_ok("generate", &config, &[]);
    assert_eq!(out["detail"]["resumed"], 100);
    assert_eq!(server.hits() - hits_at_kill, 100);
    assert_eq!((server.served(), line_count(&manifest)), (200, 200));
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() {
    let ws = Workspace::new();
    ws.seeds(&male_groups(), 1);
    ws.lexicon(&domain_words());
    ws.synthetic_backend(json!({
        "nurse": { "gender_flip_prob": 0.5, "age_shift_years": 4.0 },
        "gun": { "gray_shift": -6.0 },
        "knitting": { "age_shift_years": 9.0, "gray_shift": 2.5 },
    }));
    let mut bundles = Vec::new();
    for out in ["first", "second"] {
        let config = ws.config(&format!("{out}.json"), json!({ "output_dir": out, "concurrency": 3 }));
        let run = pipeline(&config, &[]);
        let run_id = run_ok("report", &config, &[])["run_id"].as_str().unwrap().to_string();
        let reports = dir_files(&ws.path().join(out).join("reports").join(&run_id));
        assert!(reports.keys().any(|k| k.ends_with(".svg")));
        let words = std::fs::read(run.join("words.jsonl")).unwrap();
        let models = std::fs::read(run.join("models.jsonl")).unwrap();
        bundles.push((words, models, reports));
    }
    assert!(bundles[0] == bundles[1], "runs differ");
}

fn sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pairs: Vec<PairScore> = (0..600)
        .map(|i| {
            let age = match i % 3 {
                0 => rng.random_range(1.01..3.0),
                1 => rng.random_range(-3.0..-1.01),
                _ => rng.random_range(-0.5..0.5),
            };
            PairScore {
                pair_id: format!("pair{i:03}"),
                seed_id: format!("s{}", i % 18),
                prompt_id: format!("p{}", i / 18),
                word: format!("w{}", i / 18),
                domain: Domain::Activity,
                model_id: "m".into(),
                variant: Variant::Ori,
                in_gender: Gender::Male,
                out_gender: Gender::Male,
                in_age: 30.0,
                out_age: 30.0 + 25.0 * age,
                in_gray: 120.0,
                out_gray: 120.0,
                gender: 0.0,
                age,
                race: 0.0,
            }
        })
        .collect();
    let bands = Band::defaults(Attribute::Age);
    let counts = [25, 25, 50];
    let a = select_annotation_candidates(&pairs, Attribute::Age, &bands, &counts, 7).unwrap();
    let b = select_annotation_candidates(&pairs, Attribute::Age, &bands, &counts, 7).unwrap();
    let c = select_annotation_candidates(&pairs, Attribute::Age, &bands, &counts, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let by_id: HashMap<&str, f64> = pairs.iter().map(|p| (p.pair_id.as_str(), p.age)).collect();
    let in_band = [|x: f64| x > 1.0, |x: f64| x < -1.0, |x: f64| x > -0.2 && x < 0.2];
    for pick in [&a, &c] {
        assert_eq!(pick.iter().map(Vec::len).collect::<Vec<_>>(), counts);
        let mut seen = BTreeSet::new();
        for (i, ids) in pick.iter().enumerate() {
            for id in ids {
                assert!(in_band[i](by_id[id.as_str()]), "{id} outside band {i}");
                assert!(seen.insert(id.clone()), "{id} drawn twice");
            }
        }
    }
}

fn main() {
    let criteria: [(&str, fn()); 10] = [
        ("formula exactness", formula_exactness),
        ("model average aggregation", model_average_aggregation),
        ("mitigation summary", mitigation_summary),
        ("photometric oracle equivalence", photometric_oracle),
        ("end-to-end detection", end_to_end_detection),
        ("threshold ablation identity", threshold_ablation),
        ("multi-face rules", multi_face_rules),
        ("resumability", resumability),
        ("determinism", determinism),
        ("annotation sampling", sampling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let ok = std::panic::catch_unwind(check).is_ok();
        failed += usize::from(!ok);
        println!("criterion {}: {} {name} ({:.2?})", i + 1, if ok { "PASS" } else { "FAIL" }, start.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
