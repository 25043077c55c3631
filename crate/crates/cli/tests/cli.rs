//! End-to-end tests of the `vlaudit` binary and its exit-code contract.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vlaudit_core::audit::ModelAuditReport;
use vlaudit_core::{write_labeled, Axis, DemographicRecord, EmbeddingSet, LabeledEmbeddings};
use vlaudit_fixtures::{generate, FixturePaths, FixtureSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn vlaudit<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_vlaudit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(dir: &Path) -> FixturePaths {
    generate(&FixtureSpec::default())
        .unwrap()
        .write(dir)
        .unwrap()
}

fn audit_args(p: &FixturePaths, out: &Path) -> Vec<String> {
    let s = |p: &Path| p.display().to_string();
    vec![
        "audit".into(),
        "--embeddings".into(),
        s(&p.images),
        "--metadata".into(),
        s(&p.metadata),
        "--caption-vectors".into(),
        s(&p.captions),
        "--taxonomy".into(),
        s(&p.taxonomy),
        "--out-dir".into(),
        s(out),
        "--dataset".into(),
        "synthetic".into(),
    ]
}

fn with(mut args: Vec<String>, extra: &[&str]) -> Vec<String> {
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn audit_fixture_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let out = dir.path().join("out");
    let o = vlaudit(with(audit_args(&p, &out), &["--model", "m1"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "report.json",
        "report.csv",
        "grid_casc.csv",
        "grid_topk_share.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = ModelAuditReport::read(&out.join("report.json")).unwrap();
    assert_eq!(report.k, 100);
    assert_eq!(report.model_name, "m1");
    assert_eq!(report.word_audits().count(), 12);
    assert_eq!(report.config["k"], "100");
    assert_eq!(report.config["axes"], "race,gender,race_gender");
    assert!(report.word_audits().all(|w| w.relevance.is_none()));
    let grid = std::fs::read_to_string(out.join("grid_casc.csv")).unwrap();
    assert_eq!(grid.lines().count(), 13);
}

#[test]
fn audit_is_deterministic_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let load = |out: &Path, threads: &str| {
        let args = with(audit_args(&p, out), &["--threads", threads]);
        assert_eq!(code(&vlaudit(args)), 0);
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap())
                .unwrap();
        v.as_object_mut().unwrap().remove("created_at");
        (v, std::fs::read(out.join("report.csv")).unwrap())
    };
    let a = load(&dir.path().join("a"), "1");
    let b = load(&dir.path().join("b"), "4");
    assert_eq!(a, b);
}

#[test]
fn audit_axes_and_k_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let out = dir.path().join("out");
    let o = vlaudit(with(
        audit_args(&p, &out),
        &["--axes", "gender", "-k", "50"],
    ));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = ModelAuditReport::read(&out.join("report.json")).unwrap();
    assert_eq!(report.k, 50);
    for w in report.word_audits() {
        assert_eq!(
            w.normalized_entropies.keys().copied().collect::<Vec<_>>(),
            vec![Axis::Gender]
        );
        assert_eq!(w.topk_indices.len(), 50);
    }
    assert!(!out.join("grid_topk_share.csv").exists());
}

#[test]
fn audit_with_baseline_means_reports_relevance() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let baseline = dir.path().join("baseline.txt");
    std::fs::write(&baseline, "0.1\n0.2\n0.3\n0.4\n").unwrap();
    let out = dir.path().join("out");
    let o = vlaudit(with(
        audit_args(&p, &out),
        &["--baseline-means", baseline.to_str().unwrap()],
    ));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = ModelAuditReport::read(&out.join("report.json")).unwrap();
    for w in report.word_audits() {
        let expected = [0.1, 0.2, 0.3, 0.4]
            .iter()
            .filter(|&&b| b < w.mean_topk_similarity)
            .count() as f64
            / 4.0;
        assert_eq!(w.relevance, Some(expected));
    }
}

#[test]
fn audit_with_baseline_vectors_reports_relevance() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    // the caption vectors double as a baseline: each caption ranks itself
    let out = dir.path().join("out");
    let o = vlaudit(with(
        audit_args(&p, &out),
        &["--baseline-vectors", p.captions.to_str().unwrap()],
    ));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = ModelAuditReport::read(&out.join("report.json")).unwrap();
    let mut means: Vec<f64> = report
        .word_audits()
        .map(|w| w.mean_topk_similarity)
        .collect();
    means.sort_by(f64::total_cmp);
    for w in report.word_audits() {
        let rank = means
            .iter()
            .filter(|&&m| m < w.mean_topk_similarity)
            .count();
        assert_eq!(w.relevance, Some(rank as f64 / 12.0));
    }
}

#[test]
fn missing_metadata_is_input_error_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = fixture(&dir.path().join("fx"));
    p.metadata = dir.path().join("absent.csv");
    let o = vlaudit(audit_args(&p, &dir.path().join("out")));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
    assert!(
        !dir.path().join("out").exists(),
        "fails before writing anything"
    );
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let out = dir.path().join("out");
    assert_eq!(code(&vlaudit(with(audit_args(&p, &out), &["-k", "0"]))), 64);
    assert_eq!(
        code(&vlaudit(with(audit_args(&p, &out), &["--axes", "age"]))),
        64
    );
    assert_eq!(code(&vlaudit(["audit"])), 64);
    assert_eq!(code(&vlaudit(["frobnicate"])), 64);
    assert_eq!(code(&vlaudit(["--threads", "0", "inspect", "x"])), 64);
    assert_eq!(code(&vlaudit(["--help"])), 0);
    assert_eq!(code(&vlaudit(["--version"])), 0);
}

#[test]
fn manifest_mismatch_names_first_bad_caption() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let mut entries: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(&p.manifest).unwrap()).unwrap();
    entries.swap(2, 3);
    std::fs::write(&p.manifest, serde_json::to_string(&entries).unwrap()).unwrap();
    let o = vlaudit(audit_args(&p, &dir.path().join("out")));
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("caption 2"), "{err}");
    assert!(
        err.contains(entries[2]["caption"].as_str().unwrap()),
        "{err}"
    );
}

#[test]
fn manifest_accepts_plain_caption_list() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let entries: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(&p.manifest).unwrap()).unwrap();
    let plain: Vec<&str> = entries
        .iter()
        .map(|e| e["caption"].as_str().unwrap())
        .collect();
    let sidecar = dir.path().join("sidecar.json");
    std::fs::write(
        &sidecar,
        serde_json::json!({ "captions": plain }).to_string(),
    )
    .unwrap();
    let args = with(
        audit_args(&p, &dir.path().join("out")),
        &["--caption-manifest", sidecar.to_str().unwrap()],
    );
    let o = vlaudit(args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bundled_taxonomy_rejects_fixture_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let mut args = audit_args(&p, &dir.path().join("out"));
    let at = args.iter().position(|a| a == "--taxonomy").unwrap();
    args.drain(at..at + 2);
    let o = vlaudit(args);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("a photo of an attractive person"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn dimension_mismatch_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..8).map(|j| if i % 8 == j { 1.0 } else { 0.0 }).collect())
        .collect();
    EmbeddingSet::from_rows(&rows, true)
        .unwrap()
        .write(&p.captions)
        .unwrap();
    let o = vlaudit(audit_args(&p, &dir.path().join("out")));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn degenerate_similarities_are_computation_errors() {
    // every image identical: all similarities equal, so C-ASC is undefined
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let mut meta = Vec::new();
    for g in Axis::RaceGender.groups() {
        for _ in 0..2 {
            meta.push(DemographicRecord {
                record_id: format!("r{}", meta.len()),
                race: g.race.unwrap(),
                gender: g.gender.unwrap(),
                age_band: None,
            });
        }
    }
    let mut row = vec![0.0; 64];
    row[63] = 1.0;
    let set = EmbeddingSet::from_rows(&vec![row; meta.len()], true).unwrap();
    write_labeled(
        &LabeledEmbeddings::new(set, meta).unwrap(),
        &p.images,
        &p.metadata,
    )
    .unwrap();
    let o = vlaudit(with(audit_args(&p, &dir.path().join("out")), &["-k", "5"]));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
}

#[test]
fn render_captions_bundled() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("captions.txt");
    let o = vlaudit(["render-captions", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), vlaudit_core::Taxonomy::bundled().word_count());
    assert!(lines.contains(&"a photo of an ambitious person"));
    let manifest: Vec<Value> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("captions.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.len(), lines.len());
    let ambitious = manifest.iter().find(|m| m["word"] == "ambitious").unwrap();
    assert_eq!(ambitious["caption"], "a photo of an ambitious person");
    assert_eq!(ambitious["kind"], "Adjective");
    assert_eq!(ambitious["category"], "Behavioral");
    for (line, m) in lines.iter().zip(&manifest) {
        assert_eq!(m["caption"], *line);
    }
}

#[test]
fn render_captions_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let tax = dir.path().join("bad.json");
    std::fs::write(
        &tax,
        r#"[{"category": "Hobbies", "words": [{"text": "chess", "kind": "Noun"}]}]"#,
    )
    .unwrap();
    let o = vlaudit([
        "render-captions",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--out",
        dir.path().join("c.txt").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Hobbies"), "{}", stderr(&o));
}

fn scan_words(dir: &Path, inputs: &[&Path], extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("scan-out");
    let mut args = vec!["scan".to_string()];
    args.extend(inputs.iter().map(|p| p.display().to_string()));
    args.extend([
        "--words-file".into(),
        data("hand12_words.txt").display().to_string(),
    ]);
    args.extend(["--out-dir".into(), out.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    (vlaudit(args), out)
}

fn read_stats(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap()
}

#[test]
fn scan_hand_fixture_matches_tally() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = scan_words(dir.path(), &[&data("hand12.txt")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_stats(&out);
    assert_eq!(stats["captions_scanned"], 12);
    let nurse = &stats["per_word"]["nurse"];
    assert_eq!(
        (nurse["male_count"].as_u64(), nurse["female_count"].as_u64()),
        (Some(1), Some(3))
    );
    let csv = std::fs::read_to_string(out.join("proportions.csv")).unwrap();
    assert!(csv.contains("nurse,25.0,75.0,1,3,0,4"), "{csv}");
    assert!(csv.contains("maid,0.0,100.0,0,1,1,2"), "{csv}");
}

#[test]
fn scan_without_clitic_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = scan_words(dir.path(), &[&data("hand12.txt")], &["--no-split-clitics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // "She's the maid of honor" no longer counts as female
    let maid = &read_stats(&out)["per_word"]["maid"];
    assert_eq!(
        (
            maid["female_count"].as_u64(),
            maid["total_matched"].as_u64()
        ),
        (Some(0), Some(1))
    );
}

#[test]
fn scan_empty_file_gives_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let (o, out) = scan_words(dir.path(), &[&empty], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_stats(&out);
    assert_eq!(stats["captions_scanned"], 0);
    assert_eq!(stats["per_word"]["nurse"]["total_matched"], 0);
    let csv = std::fs::read_to_string(out.join("proportions.csv")).unwrap();
    assert!(csv.contains("nurse,,,0,0,0,0"), "{csv}");
}

#[test]
fn scan_gzip_and_multiple_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let gz = dir.path().join("hand12.txt.gz");
    let mut enc = flate2::write::GzEncoder::new(
        std::fs::File::create(&gz).unwrap(),
        flate2::Compression::default(),
    );
    enc.write_all(&std::fs::read(data("hand12.txt")).unwrap())
        .unwrap();
    enc.finish().unwrap();
    let (o, out) = scan_words(dir.path(), &[&gz, &data("hand12.txt")], &["--workers", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_stats(&out);
    assert_eq!(stats["captions_scanned"], 24);
    assert_eq!(stats["per_word"]["nurse"]["female_count"], 6);
}

#[test]
fn scan_bad_gzip_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.gz");
    std::fs::write(&bad, [0x1f, 0x8b, 0x08, 0x00, 0xde, 0xad, 0xbe, 0xef, 0x00]).unwrap();
    let (o, _) = scan_words(dir.path(), &[&bad], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("bad.gz"), "{}", stderr(&o));
}

#[test]
fn scan_csv_column_and_taxonomy_words() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.csv");
    std::fs::write(
        &corpus,
        "url,text\nu1,she is a nurse\nu2,\"he, a plumber\"\nu3,her plumber\n",
    )
    .unwrap();
    let tax = dir.path().join("tax.json");
    std::fs::write(&tax, vlaudit_core::Taxonomy::bundled_json()).unwrap();
    let out = dir.path().join("out");
    let o = vlaudit([
        "scan",
        corpus.to_str().unwrap(),
        "--format",
        "csv",
        "--caption-column",
        "text",
        "--words-file",
        tax.to_str().unwrap(),
        "--category",
        "Occupation",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_stats(&out);
    assert_eq!(stats["per_word"]["plumber"]["male_count"], 1);
    assert_eq!(stats["per_word"]["plumber"]["female_count"], 1);
    assert!(stats["per_word"].get("attractive").is_none());

    let o = vlaudit([
        "scan",
        corpus.to_str().unwrap(),
        "--format",
        "csv",
        "--caption-column",
        "missing",
        "--words-file",
        data("hand12_words.txt").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn scan_custom_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lex.json");
    std::fs::write(&lex, r#"{"male": ["man"], "female": ["woman"]}"#).unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "a woman who is a nurse\nshe is a nurse\n").unwrap();
    let (o, out) = scan_words(
        dir.path(),
        &[&corpus],
        &["--lexicon-file", lex.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_stats(&out)["per_word"]["nurse"]["female_count"], 1);

    std::fs::write(&lex, r#"{"male": ["they"], "female": ["they"]}"#).unwrap();
    let (o, _) = scan_words(
        dir.path(),
        &[&corpus],
        &["--lexicon-file", lex.to_str().unwrap()],
    );
    assert_eq!(code(&o), 2);
}

fn audited_report(dir: &Path, model: &str, k: &str) -> PathBuf {
    let p = FixturePaths::in_dir(&dir.join("fx"));
    if !p.images.exists() {
        fixture(&dir.join("fx"));
    }
    let out = dir.join(format!("out-{model}-{k}"));
    let o = vlaudit(with(audit_args(&p, &out), &["--model", model, "-k", k]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("report.json")
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = audited_report(dir.path(), "beta", "100");
    let b = audited_report(dir.path(), "alpha", "100");

    let one = vlaudit(["compare", a.to_str().unwrap()]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let text = String::from_utf8(one.stdout).unwrap();
    let report = ModelAuditReport::read(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("category,axis,beta"));
    for cat in &report.categories {
        for (axis, m) in &cat.mean_entropy_by_axis {
            assert!(
                text.contains(&format!("{},{},{}", cat.category, axis, m)),
                "{text}"
            );
        }
    }

    let out = dir.path().join("cmp.csv");
    let two = vlaudit([
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&two), 0, "{}", stderr(&two));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("category,axis,alpha,beta"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);

    let c = audited_report(dir.path(), "gamma", "50");
    let bad = vlaudit(["compare", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("not comparable"), "{}", stderr(&bad));
}

#[test]
fn inspect_reports_headers_and_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(&dir.path().join("fx"));
    let o = vlaudit([
        "inspect",
        p.images.to_str().unwrap(),
        "--metadata",
        p.metadata.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("dim:        64"), "{text}");
    assert!(text.contains("count:      2800"), "{text}");
    assert!(text.contains("2800 rows aligned"), "{text}");

    let mut bytes = std::fs::read(&p.images).unwrap();
    bytes.truncate(bytes.len() - 3);
    let truncated = dir.path().join("t.emb");
    std::fs::write(&truncated, &bytes).unwrap();
    assert_eq!(code(&vlaudit(["inspect", truncated.to_str().unwrap()])), 2);

    bytes[0] = b'X';
    let bad_magic = dir.path().join("m.emb");
    std::fs::write(&bad_magic, &bytes).unwrap();
    assert_eq!(code(&vlaudit(["inspect", bad_magic.to_str().unwrap()])), 2);
}
