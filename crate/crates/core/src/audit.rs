//! Audit orchestration: per-caption retrieval audits, per-category entropy
//! aggregates, intersectional grids, top words per group, cross-model
//! comparison and report serialization.

use std::collections::BTreeMap;
use std::io::Write;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demographics::{Axis, Group, GroupMask};
use crate::embedding_store::{EmbeddingSet, LabeledEmbeddings};
use crate::error::{Error, Result};
use crate::metrics::{
    group_distribution, normalized_entropy, similarity_vector, topk, GroupDistribution,
    RelevanceBaseline, SimilarityStats,
};
use crate::taxonomy::{Caption, CategoryName, TaxonomyCategory};

pub const DEFAULT_K: usize = 100;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// An image set prepared for auditing: rows normalized, with one group mask
/// per race, gender and intersection.
#[derive(Debug)]
pub struct AuditContext<'a> {
    data: &'a LabeledEmbeddings,
    masks: Vec<(Group, GroupMask)>,
}

impl<'a> AuditContext<'a> {
    pub fn new(data: &'a LabeledEmbeddings) -> Result<Self> {
        if !data.embeddings().is_normalized() {
            return Err(Error::State(
                "audited image set must be L2-normalized".into(),
            ));
        }
        let masks = Group::all_groups()
            .into_iter()
            .map(|g| Ok((g, GroupMask::from_group(&g, data.metadata())?)))
            .collect::<Result<_>>()?;
        Ok(AuditContext { data, masks })
    }

    pub fn data(&self) -> &LabeledEmbeddings {
        self.data
    }
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub k: usize,
    pub axes: Vec<Axis>,
    pub baseline: Option<RelevanceBaseline>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            k: DEFAULT_K,
            axes: Axis::ALL.to_vec(),
            baseline: None,
        }
    }
}

impl AuditOptions {
    pub fn with_k(k: usize) -> Self {
        AuditOptions {
            k,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAudit {
    pub caption: Caption,
    pub k: usize,
    pub casc_by_group: IndexMap<String, f64>,
    pub retrieval_distributions: IndexMap<Axis, GroupDistribution>,
    pub normalized_entropies: IndexMap<Axis, f64>,
    pub topk_indices: Vec<usize>,
    pub mean_topk_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
}

impl WordAudit {
    pub fn word(&self) -> &str {
        &self.caption.source_word.text
    }

    /// Group label with the largest C-ASC among the given axis's groups;
    /// first in label order on ties.
    pub fn casc_argmax(&self, axis: Axis) -> (String, f64) {
        let mut best: Option<(String, f64)> = None;
        for label in axis.labels() {
            let v = self.casc_by_group[&label];
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((label, v));
            }
        }
        best.expect("axes have at least two groups")
    }
}

pub fn run_word_audit(
    caption_vec: &[f64],
    caption: &Caption,
    data: &LabeledEmbeddings,
    k: usize,
) -> Result<WordAudit> {
    let ctx = AuditContext::new(data)?;
    audit_word(&ctx, caption_vec, caption, &AuditOptions::with_k(k))
}

pub fn audit_word(
    ctx: &AuditContext<'_>,
    caption_vec: &[f64],
    caption: &Caption,
    opts: &AuditOptions,
) -> Result<WordAudit> {
    audit_word_inner(ctx, caption_vec, caption, opts)
        .map_err(|e| e.context(format!("caption {:?}", caption.text)))
}

fn audit_word_inner(
    ctx: &AuditContext<'_>,
    caption_vec: &[f64],
    caption: &Caption,
    opts: &AuditOptions,
) -> Result<WordAudit> {
    if opts.k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let sims = similarity_vector(caption_vec, ctx.data.embeddings())?;
    let stats = SimilarityStats::new(&sims)?;
    let casc_by_group = ctx
        .masks
        .iter()
        .map(|(g, m)| Ok((g.label(), stats.casc(m)?)))
        .collect::<Result<IndexMap<_, _>>>()?;

    let top = topk(&sims, opts.k);
    let topk_indices: Vec<usize> = top.iter().map(|&(i, _)| i).collect();
    let mean_topk_similarity = top.iter().map(|&(_, s)| s).sum::<f64>() / top.len() as f64;

    let mut retrieval_distributions = IndexMap::new();
    let mut normalized_entropies = IndexMap::new();
    for &axis in &opts.axes {
        let dist = group_distribution(&topk_indices, ctx.data.metadata(), axis)?;
        normalized_entropies.insert(axis, normalized_entropy(&dist)?);
        retrieval_distributions.insert(axis, dist);
    }

    Ok(WordAudit {
        caption: caption.clone(),
        k: opts.k,
        casc_by_group,
        retrieval_distributions,
        normalized_entropies,
        topk_indices,
        mean_topk_similarity,
        relevance: opts
            .baseline
            .as_ref()
            .map(|b| b.score(mean_topk_similarity)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAudit {
    pub category: CategoryName,
    pub word_audits: Vec<WordAudit>,
    pub mean_entropy_by_axis: IndexMap<Axis, f64>,
}

impl CategoryAudit {
    /// Assembles word audits (already in taxonomy order) and their per-axis
    /// mean entropies.
    pub fn from_word_audits(category: CategoryName, word_audits: Vec<WordAudit>) -> Result<Self> {
        if word_audits.is_empty() {
            return Err(Error::Domain(format!(
                "category {category} has no word audits"
            )));
        }
        let mut mean_entropy_by_axis = IndexMap::new();
        for &axis in word_audits[0].normalized_entropies.keys() {
            let values: Vec<f64> = word_audits
                .iter()
                .map(|w| {
                    w.normalized_entropies.get(&axis).copied().ok_or_else(|| {
                        Error::Domain(format!("word {:?} lacks a {axis} entropy", w.word()))
                    })
                })
                .collect::<Result<_>>()?;
            mean_entropy_by_axis.insert(axis, values.iter().sum::<f64>() / values.len() as f64);
        }
        Ok(CategoryAudit {
            category,
            word_audits,
            mean_entropy_by_axis,
        })
    }
}

/// Audits every word of a category. `caption_vecs` holds one unit vector per
/// word, in the category's word order. Words run in parallel; any failure
/// aborts the whole category.
pub fn run_category_audit(
    category: &TaxonomyCategory,
    caption_vecs: &[&[f64]],
    ctx: &AuditContext<'_>,
    opts: &AuditOptions,
) -> Result<CategoryAudit> {
    if caption_vecs.len() != category.words.len() {
        return Err(Error::Alignment(format!(
            "category {} has {} words but {} caption vectors",
            category.name,
            category.words.len(),
            caption_vecs.len()
        )));
    }
    let audits = category
        .words
        .par_iter()
        .zip(caption_vecs.par_iter())
        .map(|(word, vec)| {
            let caption = crate::taxonomy::render_caption_in(word, category.name);
            audit_word(ctx, vec, &caption, opts)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(format!("category {}", category.name)))?;
    CategoryAudit::from_word_audits(category.name, audits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    Casc,
    TopkShare,
}

impl GridMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            GridMetric::Casc => "casc",
            GridMetric::TopkShare => "topk_share",
        }
    }
}

/// Words × 14 intersections matrix of one metric, ready for a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionalGrid {
    pub metric: GridMetric,
    pub words: Vec<String>,
    pub groups: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl IntersectionalGrid {
    pub fn from_word_audits<'w>(
        audits: impl IntoIterator<Item = &'w WordAudit>,
        metric: GridMetric,
    ) -> Result<Self> {
        let groups = Axis::RaceGender.labels();
        let mut words = Vec::new();
        let mut values = Vec::new();
        for a in audits {
            let row = match metric {
                GridMetric::Casc => groups.iter().map(|g| a.casc_by_group[g]).collect(),
                GridMetric::TopkShare => a
                    .retrieval_distributions
                    .get(&Axis::RaceGender)
                    .ok_or_else(|| {
                        Error::Domain(format!("word {:?} has no race_gender retrieval", a.word()))
                    })?
                    .probabilities
                    .clone(),
            };
            words.push(a.word().to_string());
            values.push(row);
        }
        if words.is_empty() {
            return Err(Error::Domain("grid needs at least one caption".into()));
        }
        Ok(IntersectionalGrid {
            metric,
            words,
            groups,
            values,
        })
    }

    /// Column label with the largest value in a row.
    pub fn row_argmax(&self, row: usize) -> &str {
        let r = &self.values[row];
        let mut best = 0;
        for (i, v) in r.iter().enumerate() {
            if *v > r[best] {
                best = i;
            }
        }
        &self.groups[best]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["word".to_string()];
        header.extend(self.groups.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (word, row) in self.words.iter().zip(&self.values) {
            let mut rec = vec![word.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Grid over an arbitrary caption list, each paired with its unit vector.
pub fn intersectional_grid(
    captions: &[(Caption, &[f64])],
    ctx: &AuditContext<'_>,
    k: usize,
    metric: GridMetric,
) -> Result<IntersectionalGrid> {
    if captions.is_empty() {
        return Err(Error::Domain("grid needs at least one caption".into()));
    }
    let opts = AuditOptions {
        k,
        axes: vec![Axis::RaceGender],
        baseline: None,
    };
    let audits = captions
        .par_iter()
        .map(|(c, v)| audit_word(ctx, v, c, &opts))
        .collect::<Result<Vec<_>>>()?;
    IntersectionalGrid::from_word_audits(&audits, metric)
}

/// The word with the largest C-ASC for a group; earliest in taxonomy order
/// on ties.
pub fn top_word_per_group<'c>(category: &'c CategoryAudit, group: &str) -> Result<(&'c str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for w in &category.word_audits {
        let v = *w
            .casc_by_group
            .get(group)
            .ok_or_else(|| Error::Domain(format!("no C-ASC for group {group:?}")))?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((w.word(), v));
        }
    }
    best.ok_or_else(|| Error::Domain(format!("category {} is empty", category.category)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAuditReport {
    pub model_name: String,
    pub dataset_name: String,
    pub k: usize,
    pub categories: Vec<CategoryAudit>,
    pub created_at: String,
    pub engine_version: String,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl ModelAuditReport {
    pub fn new(
        model_name: impl Into<String>,
        dataset_name: impl Into<String>,
        k: usize,
        categories: Vec<CategoryAudit>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = categories.iter().find(|c| !seen.insert(c.category)) {
            return Err(Error::Domain(format!(
                "category {} appears twice",
                dup.category
            )));
        }
        Ok(ModelAuditReport {
            model_name: model_name.into(),
            dataset_name: dataset_name.into(),
            k,
            categories,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            engine_version: ENGINE_VERSION.to_string(),
            config: BTreeMap::new(),
        })
    }

    pub fn category(&self, name: CategoryName) -> Option<&CategoryAudit> {
        self.categories.iter().find(|c| c.category == name)
    }

    pub fn word_audits(&self) -> impl Iterator<Item = &WordAudit> {
        self.categories.iter().flat_map(|c| c.word_audits.iter())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelAuditReport::from_json(&json).map_err(|e| e.context(path.display().to_string()))
    }

    /// Flat export: `model,dataset,category,word,axis,group,metric,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "model", "dataset", "category", "word", "axis", "group", "metric", "value",
        ])
        .map_err(csv_err)?;
        for cat in &self.categories {
            let category = cat.category.as_str();
            let mut row = |word: &str, axis: &str, group: &str, metric: &str, value: f64| {
                w.write_record([
                    self.model_name.as_str(),
                    self.dataset_name.as_str(),
                    category,
                    word,
                    axis,
                    group,
                    metric,
                    &value.to_string(),
                ])
            };
            for wa in &cat.word_audits {
                let word = wa.word();
                for (label, &v) in &wa.casc_by_group {
                    let axis = label
                        .parse::<Group>()
                        .ok()
                        .and_then(|g| g.axis())
                        .map_or("", Axis::as_str);
                    row(word, axis, label, "casc", v).map_err(csv_err)?;
                }
                for (axis, dist) in &wa.retrieval_distributions {
                    for (label, &p) in dist.group_labels.iter().zip(&dist.probabilities) {
                        row(word, axis.as_str(), label, "topk_share", p).map_err(csv_err)?;
                    }
                }
                for (axis, &h) in &wa.normalized_entropies {
                    row(word, axis.as_str(), "", "normalized_entropy", h).map_err(csv_err)?;
                }
                row(
                    word,
                    "",
                    "",
                    "mean_topk_similarity",
                    wa.mean_topk_similarity,
                )
                .map_err(csv_err)?;
                if let Some(r) = wa.relevance {
                    row(word, "", "", "relevance", r).map_err(csv_err)?;
                }
            }
            for (axis, &m) in &cat.mean_entropy_by_axis {
                row("", axis.as_str(), "", "mean_normalized_entropy", m).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("writing CSV: {e}"))
}

/// Runs every category of a taxonomy. `caption_vecs` rows follow the
/// taxonomy's caption order.
pub fn run_model_audit(
    categories: &[TaxonomyCategory],
    caption_vecs: &EmbeddingSet,
    ctx: &AuditContext<'_>,
    opts: &AuditOptions,
) -> Result<Vec<CategoryAudit>> {
    let total: usize = categories.iter().map(|c| c.words.len()).sum();
    if caption_vecs.count() != total {
        return Err(Error::Alignment(format!(
            "{} caption vectors for {total} taxonomy words",
            caption_vecs.count()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(categories.len());
    for cat in categories {
        let vecs: Vec<&[f64]> = (offset..offset + cat.words.len())
            .map(|i| caption_vecs.row(i))
            .collect();
        offset += cat.words.len();
        out.push(run_category_audit(cat, &vecs, ctx, opts)?);
    }
    Ok(out)
}

/// Mean normalized entropy per category and axis, one column per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub dataset_name: String,
    pub k: usize,
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub category: CategoryName,
    pub axis: Axis,
    pub values: Vec<Option<f64>>,
}

pub fn compare_models(reports: &[ModelAuditReport]) -> Result<ModelComparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Comparability("no reports given".into()))?;
    for r in &reports[1..] {
        if r.dataset_name != first.dataset_name {
            return Err(Error::Comparability(format!(
                "dataset {:?} vs {:?}",
                first.dataset_name, r.dataset_name
            )));
        }
        if r.k != first.k {
            return Err(Error::Comparability(format!("k {} vs {}", first.k, r.k)));
        }
    }
    let mut sorted: Vec<&ModelAuditReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.model_name.cmp(&b.model_name));

    let mut keys: Vec<(CategoryName, Axis)> = Vec::new();
    for r in &sorted {
        for c in &r.categories {
            for &axis in c.mean_entropy_by_axis.keys() {
                if !keys.contains(&(c.category, axis)) {
                    keys.push((c.category, axis));
                }
            }
        }
    }
    let rows = keys
        .into_iter()
        .map(|(category, axis)| ComparisonRow {
            category,
            axis,
            values: sorted
                .iter()
                .map(|r| {
                    r.category(category)
                        .and_then(|c| c.mean_entropy_by_axis.get(&axis).copied())
                })
                .collect(),
        })
        .collect();
    Ok(ModelComparison {
        dataset_name: first.dataset_name.clone(),
        k: first.k,
        models: sorted.iter().map(|r| r.model_name.clone()).collect(),
        rows,
    })
}

impl ModelComparison {
    /// `category,axis,<model>...`; missing values are empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["category".to_string(), "axis".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.category.to_string(), row.axis.to_string()];
            rec.extend(
                row.values
                    .iter()
                    .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}
