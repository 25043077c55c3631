//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use vlaudit_core::audit::{
    compare_models, run_model_audit, AuditContext, AuditOptions, GridMetric, IntersectionalGrid,
    ModelAuditReport,
};
use vlaudit_core::corpus_scan::{
    open_corpus, proportions, CorpusFormat, CorpusRecord, PronounLexicon, Scanner, Tokenizer,
};
use vlaudit_core::embedding_store::{read_header, read_metadata, MAGIC};
use vlaudit_core::metrics::{mean_topk_similarity, similarity_vector, RelevanceBaseline};
use vlaudit_core::taxonomy::{caption_manifest, first_caption_mismatch, load_taxonomy};
use vlaudit_core::{
    load_labeled, Axis, CategoryName, EmbeddingSet, Error, LabeledEmbeddings, Taxonomy,
};

use crate::{
    AuditArgs, CliError, Command, CompareArgs, FormatArg, InspectArgs, RenderArgs, ScanArgs,
};

type CmdResult<T = ()> = Result<T, CliError>;

pub(crate) fn dispatch(cli: &crate::Cli) -> CmdResult {
    match &cli.command {
        Command::Audit(a) => audit(a),
        Command::RenderCaptions(a) => render_captions(a),
        Command::Scan(a) => scan(a, cli.threads),
        Command::Compare(a) => compare(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn require_file(role: &str, path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{role} file not found: {}",
            path.display()
        )))
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(Error::io(dir, e).to_string()))
}

fn create_file(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(Error::io(path, e).to_string()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CmdResult {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(Error::io(path, e).to_string()))
}

/// `captions.emb` → `captions.manifest.json`.
fn sibling_manifest(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn load_taxonomy_arg(path: Option<&Path>) -> CmdResult<Taxonomy> {
    match path {
        Some(p) => {
            require_file("taxonomy", p)?;
            load_taxonomy(p).map_err(|e| CliError::Input(e.to_string()))
        }
        None => Ok(Taxonomy::bundled()),
    }
}

/// Caption strings from a manifest. Accepts the array written by
/// `render-captions`, a plain array of caption strings, or an encoder
/// sidecar object holding either under `manifest` or `captions`.
fn manifest_captions(value: &Value) -> Option<Vec<String>> {
    match value {
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::String(s) => Some(s.clone()),
                Value::Object(o) => o.get("caption")?.as_str().map(str::to_string),
                _ => None,
            })
            .collect(),
        Value::Object(o) => o
            .get("manifest")
            .or_else(|| o.get("captions"))
            .and_then(manifest_captions),
        _ => None,
    }
}

fn read_manifest_captions(path: &Path) -> CmdResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(Error::io(path, e).to_string()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("caption manifest {}: {e}", path.display())))?;
    manifest_captions(&value).ok_or_else(|| {
        CliError::Input(format!(
            "caption manifest {}: expected a list of captions or manifest entries",
            path.display()
        ))
    })
}

fn read_baseline_means(path: &Path) -> CmdResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(Error::io(path, e).to_string()))?;
    let bad = |m: String| CliError::Input(format!("baseline means {}: {m}", path.display()));
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| bad(e.to_string()));
    }
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| bad(format!("{t:?} is not a number")))
        })
        .collect()
}

fn ensure_unit(set: EmbeddingSet, what: &str) -> CmdResult<EmbeddingSet> {
    if set.is_normalized() {
        Ok(set)
    } else {
        log::warn!("{what} are not flagged as normalized; L2-normalizing");
        set.l2_normalize()
            .map_err(|e| CliError::from(e.context(what.to_string())))
    }
}

fn check_dim(what: &str, got: usize, expected: usize) -> CmdResult {
    if got == expected {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} have dimension {got}, image embeddings have {expected}"
        )))
    }
}

fn audit(a: &AuditArgs) -> CmdResult {
    let manifest_path = a
        .caption_manifest
        .clone()
        .unwrap_or_else(|| sibling_manifest(&a.caption_vectors));
    require_file("embeddings", &a.embeddings)?;
    require_file("metadata", &a.metadata)?;
    require_file("caption vectors", &a.caption_vectors)?;
    require_file("caption manifest", &manifest_path)?;
    for (role, p) in [
        ("baseline means", &a.baseline_means),
        ("baseline vectors", &a.baseline_vectors),
    ] {
        if let Some(p) = p {
            require_file(role, p)?;
        }
    }
    let k = a.k as usize;

    let taxonomy = load_taxonomy_arg(a.taxonomy.as_deref())?;
    let expected = caption_manifest(&taxonomy);
    let found = read_manifest_captions(&manifest_path)?;
    let expected_captions: Vec<String> = expected.iter().map(|m| m.caption.clone()).collect();
    if let Some((i, want, got)) = first_caption_mismatch(&expected_captions, &found) {
        return Err(CliError::Input(format!(
            "caption manifest {} does not match the taxonomy at caption {i}: expected {}, found {}",
            manifest_path.display(),
            want.map_or("<end of list>".to_string(), |s| format!("{s:?}")),
            got.map_or("<end of list>".to_string(), |s| format!("{s:?}")),
        )));
    }

    let images =
        load_labeled(&a.embeddings, &a.metadata).map_err(|e| CliError::Input(e.to_string()))?;
    let images = if images.embeddings().is_normalized() {
        images
    } else {
        log::warn!("image embeddings are not flagged as normalized; L2-normalizing");
        images
            .l2_normalize()
            .map_err(|e| CliError::from(e.context("image embeddings")))?
    };
    let dim = images.embeddings().dim();

    let captions =
        EmbeddingSet::read(&a.caption_vectors).map_err(|e| CliError::Input(e.to_string()))?;
    if captions.count() != expected.len() {
        return Err(CliError::Input(format!(
            "{} has {} rows but the manifest lists {} captions",
            a.caption_vectors.display(),
            captions.count(),
            expected.len()
        )));
    }
    check_dim("caption vectors", captions.dim(), dim)?;
    let captions = ensure_unit(captions, "caption vectors")?;

    let baseline = match (&a.baseline_means, &a.baseline_vectors) {
        (Some(p), _) => Some(read_baseline_means(p)?),
        (None, Some(p)) => Some(baseline_from_vectors(p, &images, k)?),
        (None, None) => None,
    }
    .map(RelevanceBaseline::new)
    .transpose()
    .map_err(|e| CliError::Input(format!("baseline: {e}")))?;

    let ctx = AuditContext::new(&images)?;
    let opts = AuditOptions {
        k,
        axes: a.axes.clone(),
        baseline,
    };
    log::info!(
        "auditing {} captions against {} images (dim {dim}, k {k})",
        captions.count(),
        images.count()
    );
    let categories = run_model_audit(taxonomy.categories(), &captions, &ctx, &opts)?;
    let mut report = ModelAuditReport::new(&a.model, &a.dataset, k, categories)?;
    report.config = audit_config(a, &manifest_path);

    create_dir(&a.out_dir)?;
    let json_path = a.out_dir.join("report.json");
    let json = report.to_json()?;
    std::fs::write(&json_path, json + "\n")
        .map_err(|e| CliError::Input(Error::io(&json_path, e).to_string()))?;
    report.write_csv(create_file(&a.out_dir.join("report.csv"))?)?;
    let mut metrics = vec![GridMetric::Casc];
    if a.axes.contains(&Axis::RaceGender) {
        metrics.push(GridMetric::TopkShare);
    }
    for metric in metrics {
        let grid = IntersectionalGrid::from_word_audits(report.word_audits(), metric)?;
        grid.write_csv(create_file(
            &a.out_dir.join(format!("grid_{}.csv", metric.as_str())),
        )?)?;
    }

    println!(
        "audited {} captions in {} categories; report written to {}",
        report.word_audits().count(),
        report.categories.len(),
        json_path.display()
    );
    for cat in &report.categories {
        let means: Vec<String> = cat
            .mean_entropy_by_axis
            .iter()
            .map(|(axis, m)| format!("{axis}={m:.4}"))
            .collect();
        println!(
            "  {:<18} mean normalized entropy {}",
            cat.category.as_str(),
            means.join(" ")
        );
    }
    Ok(())
}

fn baseline_from_vectors(path: &Path, images: &LabeledEmbeddings, k: usize) -> CmdResult<Vec<f64>> {
    let set = EmbeddingSet::read(path).map_err(|e| CliError::Input(e.to_string()))?;
    check_dim("baseline vectors", set.dim(), images.embeddings().dim())?;
    let set = ensure_unit(set, "baseline vectors")?;
    log::info!(
        "computing mean top-{k} similarity for {} baseline words",
        set.count()
    );
    set.rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| {
            let sims = similarity_vector(row, images.embeddings())?;
            mean_topk_similarity(&sims, k)
        })
        .collect::<Result<Vec<f64>, Error>>()
        .map_err(|e| CliError::from(e.context("baseline vectors")))
}

fn audit_config(a: &AuditArgs, manifest: &Path) -> BTreeMap<String, String> {
    let show = |p: &Path| p.display().to_string();
    let mut c = BTreeMap::new();
    c.insert("embeddings".into(), show(&a.embeddings));
    c.insert("metadata".into(), show(&a.metadata));
    c.insert("caption_vectors".into(), show(&a.caption_vectors));
    c.insert("caption_manifest".into(), show(manifest));
    c.insert(
        "taxonomy".into(),
        a.taxonomy.as_deref().map_or("bundled".to_string(), show),
    );
    c.insert("k".into(), a.k.to_string());
    let axes: Vec<&str> = a.axes.iter().map(|x| x.as_str()).collect();
    c.insert("axes".into(), axes.join(","));
    if let Some(p) = &a.baseline_means {
        c.insert("baseline_means".into(), show(p));
    }
    if let Some(p) = &a.baseline_vectors {
        c.insert("baseline_vectors".into(), show(p));
    }
    c
}

fn render_captions(a: &RenderArgs) -> CmdResult {
    let taxonomy = load_taxonomy_arg(a.taxonomy.as_deref())?;
    let manifest = caption_manifest(&taxonomy);
    let mut out = create_file(&a.out)?;
    for m in &manifest {
        writeln!(out, "{}", m.caption)
            .map_err(|e| CliError::Input(Error::io(&a.out, e).to_string()))?;
    }
    out.flush()
        .map_err(|e| CliError::Input(Error::io(&a.out, e).to_string()))?;
    let manifest_path = a
        .manifest
        .clone()
        .unwrap_or_else(|| sibling_manifest(&a.out));
    write_json(&manifest_path, &manifest)?;
    println!(
        "wrote {} captions to {} and manifest {}",
        manifest.len(),
        a.out.display(),
        manifest_path.display()
    );
    Ok(())
}

/// Words from a plain list (one per line; blank lines and `#` comments
/// ignored) or from a taxonomy JSON, optionally filtered by category.
fn read_words(path: &Path, categories: &[String]) -> CmdResult<Vec<String>> {
    require_file("words", path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(Error::io(path, e).to_string()))?;
    if text.trim_start().starts_with('[') {
        let taxonomy = Taxonomy::from_json(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let wanted: Vec<CategoryName> = categories
            .iter()
            .map(|c| c.parse().map_err(|e: Error| CliError::Input(e.to_string())))
            .collect::<CmdResult<_>>()?;
        return Ok(taxonomy
            .categories()
            .iter()
            .filter(|c| wanted.is_empty() || wanted.contains(&c.name))
            .flat_map(|c| c.words.iter().map(|w| w.text.clone()))
            .collect());
    }
    if !categories.is_empty() {
        return Err(CliError::Input(
            "--category needs a taxonomy JSON words file".into(),
        ));
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn scan(a: &ScanArgs, threads: Option<u64>) -> CmdResult {
    for p in &a.inputs {
        require_file("corpus", p)?;
    }
    let words = read_words(&a.words_file, &a.category)?;
    let lexicon = match &a.lexicon_file {
        Some(p) => {
            require_file("lexicon", p)?;
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(Error::io(p, e).to_string()))?;
            PronounLexicon::from_json(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => PronounLexicon::default(),
    };
    let tokenizer = Tokenizer {
        split_clitics: !a.no_split_clitics,
    };
    let scanner = Scanner::with_tokenizer(&words, lexicon, tokenizer)
        .map_err(|e| CliError::Input(e.to_string()))?
        .workers(a.workers.or(threads).map(|n| n as usize));
    let format = match a.format {
        FormatArg::Lines => CorpusFormat::Lines,
        FormatArg::Csv => CorpusFormat::Csv,
    };

    let mut sources = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let records = open_corpus(p, format, &a.caption_column)
            .map_err(|e| CliError::Input(e.context(p.display().to_string()).to_string()))?;
        sources.push((p.clone(), records));
    }
    let records = sources.into_iter().flat_map(|(p, it)| {
        it.map(move |r: Result<CorpusRecord, Error>| {
            r.map_err(|e| e.context(p.display().to_string()))
        })
    });
    let stats = scanner
        .scan(records)
        .map_err(|e| CliError::Input(e.to_string()))?;

    create_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("stats.json"), &stats)?;
    let csv_path = a.out_dir.join("proportions.csv");
    let mut w = csv::Writer::from_writer(create_file(&csv_path)?);
    for row in proportions(&stats) {
        w.serialize(&row)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", csv_path.display())))?;
    }
    w.flush()
        .map_err(|e| CliError::Input(Error::io(&csv_path, e).to_string()))?;

    println!(
        "scanned {} captions ({} skipped) for {} words; outputs in {}",
        stats.captions_scanned,
        stats.skipped_lines,
        stats.per_word.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn compare(a: &CompareArgs) -> CmdResult {
    for p in &a.reports {
        require_file("report", p)?;
    }
    let reports = a
        .reports
        .iter()
        .map(|p| ModelAuditReport::read(p).map_err(|e| CliError::Input(e.to_string())))
        .collect::<CmdResult<Vec<_>>>()?;
    let table = compare_models(&reports).map_err(|e| CliError::Input(e.to_string()))?;
    match &a.out {
        Some(p) => table.write_csv(create_file(p)?)?,
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn inspect(a: &InspectArgs) -> CmdResult {
    if a.metadata.is_some() && a.paths.len() != 1 {
        return Err(CliError::Usage(
            "--metadata needs exactly one embedding file".into(),
        ));
    }
    let mut failures = 0;
    for p in &a.paths {
        require_file("input", p)?;
        println!("{}", p.display());
        if let Err(e) = inspect_one(p, a.metadata.as_deref()) {
            println!("  valid:      no ({e})");
            failures += 1;
        }
    }
    if failures > 0 {
        Err(CliError::Input(format!(
            "{failures} file(s) failed validation"
        )))
    } else {
        Ok(())
    }
}

fn inspect_one(path: &Path, metadata: Option<&Path>) -> Result<(), Error> {
    let mut head = [0u8; 4];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if n == 4 && head == MAGIC {
        let h = read_header(path)?;
        let size = std::fs::metadata(path)
            .map_err(|e| Error::io(path, e))?
            .len();
        println!("  format:     EMB1 v{}", h.version);
        println!(
            "  flags:      {:#06x} (normalized: {})",
            h.flags,
            h.normalized()
        );
        println!("  dim:        {}", h.dim);
        println!("  count:      {}", h.count);
        println!("  file bytes: {size}");
        let set = EmbeddingSet::read(path)?;
        if let Some(m) = metadata {
            let data = load_labeled(path, m)?;
            println!(
                "  metadata:   {} rows aligned ({})",
                data.count(),
                m.display()
            );
        }
        println!("  valid:      yes ({} rows)", set.count());
    } else {
        if metadata.is_some() {
            return Err(Error::Format(
                "--metadata applies to EMB1 files only".into(),
            ));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let rows = read_metadata(file)?;
        println!("  format:     metadata CSV");
        println!("  rows:       {}", rows.len());
        println!("  valid:      yes");
    }
    Ok(())
}
