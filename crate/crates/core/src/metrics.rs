//! Numeric kernels: cosine similarity, C-ASC effect size, exact top-k,
//! retrieval group distributions, normalized entropy and the relevance
//! percentile.
//!
//! All accumulation is in `f64`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demographics::{Axis, DemographicRecord, GroupMask};
use crate::embedding_store::{l2_norm, EmbeddingSet, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};

/// Rows per parallel work item in [`similarity_vector`].
const ROW_BLOCK: usize = 2048;
const MIN_STD: f64 = 1e-12;

/// Cosine similarity of one caption to every image row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityVector(Vec<f64>);

impl SimilarityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("similarity {i} is not finite")));
        }
        Ok(SimilarityVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Dot product of a unit caption vector with every row of a normalized set.
///
/// Rows are processed in fixed blocks in parallel; each entry depends only
/// on its own row, so the output does not depend on the thread count.
pub fn similarity_vector(caption_vec: &[f64], images: &EmbeddingSet) -> Result<SimilarityVector> {
    if caption_vec.len() != images.dim() {
        return Err(Error::Dim {
            expected: images.dim(),
            got: caption_vec.len(),
        });
    }
    if !images.is_normalized() {
        return Err(Error::State("image set is not L2-normalized".into()));
    }
    let norm = l2_norm(caption_vec);
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::State(format!(
            "caption vector has norm {norm}, expected 1"
        )));
    }
    let dim = images.dim();
    let mut out = vec![0.0; images.count()];
    out.par_chunks_mut(ROW_BLOCK)
        .zip(images.as_slice().par_chunks(ROW_BLOCK * dim))
        .for_each(|(dst, block)| {
            for (d, row) in dst.iter_mut().zip(block.chunks_exact(dim)) {
                let dot: f64 = row.iter().zip(caption_vec).map(|(a, b)| a * b).sum();
                *d = dot.clamp(-1.0, 1.0);
            }
        });
    Ok(SimilarityVector(out))
}

/// Caption association score: the difference between the mean similarity
/// over the group and over its complement, divided by the population
/// standard deviation of all similarities.
pub fn casc(sims: &SimilarityVector, group: &GroupMask) -> Result<f64> {
    SimilarityStats::new(sims)?.casc(group)
}

/// Whole-dataset moments of one similarity vector, shared across the many
/// groups a caption is scored against.
#[derive(Debug, Clone)]
pub struct SimilarityStats<'a> {
    values: &'a [f64],
    total: f64,
    std: f64,
}

impl<'a> SimilarityStats<'a> {
    pub fn new(sims: &'a SimilarityVector) -> Result<Self> {
        let values = sims.values();
        if values.is_empty() {
            return Err(Error::DegenerateDistribution { std: 0.0 });
        }
        let n = values.len() as f64;
        let total: f64 = values.iter().sum();
        let mean = total / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < MIN_STD {
            return Err(Error::DegenerateDistribution { std });
        }
        Ok(SimilarityStats { values, total, std })
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn casc(&self, group: &GroupMask) -> Result<f64> {
        if group.total() != self.values.len() {
            return Err(Error::Dim {
                expected: self.values.len(),
                got: group.total(),
            });
        }
        let members = group.member_indices();
        let in_sum: f64 = members.iter().map(|&i| self.values[i]).sum();
        let out_count = self.values.len() - members.len();
        let mean_in = in_sum / members.len() as f64;
        let mean_out = (self.total - in_sum) / out_count as f64;
        Ok((mean_in - mean_out) / self.std)
    }
}

/// Descending by similarity, ascending by index on exact ties.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `min(k, n)` most similar rows, best first. Returns nothing for `k = 0`.
pub fn topk(sims: &SimilarityVector, k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = sims.values().iter().copied().enumerate().collect();
    let k = k.min(ranked.len());
    if k == 0 {
        return Vec::new();
    }
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, rank_order);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(rank_order);
    ranked
}

/// Share of each group among a set of retrieved rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub group_labels: Vec<String>,
    pub probabilities: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GroupDistribution {
    pub fn from_counts(group_labels: Vec<String>, counts: Vec<usize>) -> Result<Self> {
        if group_labels.len() != counts.len() {
            return Err(Error::Domain("labels and counts differ in length".into()));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyRetrieval);
        }
        let probabilities = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(GroupDistribution {
            group_labels,
            probabilities,
            counts,
        })
    }

    pub fn retrieval_size(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn probability(&self, label: &str) -> Option<f64> {
        self.group_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probabilities[i])
    }

    /// Label with the largest count; the first in label order on ties.
    pub fn plurality(&self) -> &str {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        &self.group_labels[best]
    }
}

pub fn group_distribution(
    retrieved: &[usize],
    metadata: &[DemographicRecord],
    axis: Axis,
) -> Result<GroupDistribution> {
    if retrieved.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    let mut counts = vec![0usize; axis.group_count()];
    for &i in retrieved {
        let rec = metadata.get(i).ok_or_else(|| {
            Error::Domain(format!(
                "retrieved index {i} out of range for {} rows",
                metadata.len()
            ))
        })?;
        counts[axis.slot(rec.race, rec.gender)] += 1;
    }
    GroupDistribution::from_counts(axis.labels(), counts)
}

/// Shannon entropy divided by the log of the number of groups; 1 for a
/// uniform distribution, 0 when one group holds all mass.
pub fn normalized_entropy(dist: &GroupDistribution) -> Result<f64> {
    let groups = dist.probabilities.len();
    if groups < 2 {
        return Err(Error::Domain(format!(
            "normalized entropy needs at least 2 groups, got {groups}"
        )));
    }
    let h: f64 = dist
        .probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // `+ 0.0` turns the −0.0 of a point mass into 0.0
    Ok((h / (groups as f64).ln()).clamp(0.0, 1.0) + 0.0)
}

/// Mean similarity of the top-k retrieved rows.
pub fn mean_topk_similarity(sims: &SimilarityVector, k: usize) -> Result<f64> {
    let top = topk(sims, k);
    if top.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    Ok(top.iter().map(|&(_, s)| s).sum::<f64>() / top.len() as f64)
}

/// Empirical CDF of the baseline at `caption_mean`: the fraction of baseline
/// entries strictly below it.
pub fn relevance_score(caption_mean_topk_sim: f64, baseline_means: &[f64]) -> Result<f64> {
    if baseline_means.is_empty() {
        return Err(Error::Domain("relevance baseline is empty".into()));
    }
    let below = baseline_means
        .iter()
        .filter(|&&b| b < caption_mean_topk_sim)
        .count();
    Ok(below as f64 / baseline_means.len() as f64)
}

/// Precomputed baseline for repeated [`relevance_score`] queries.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceBaseline {
    sorted: Vec<f64>,
}

impl RelevanceBaseline {
    pub fn new(mut means: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Domain("relevance baseline is empty".into()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "relevance baseline has non-finite entries".into(),
            ));
        }
        means.sort_by(f64::total_cmp);
        Ok(RelevanceBaseline { sorted: means })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn score(&self, caption_mean_topk_sim: f64) -> f64 {
        let below = self.sorted.partition_point(|&b| b < caption_mean_topk_sim);
        below as f64 / self.sorted.len() as f64
    }
}
