//! Synthetic labeled image sets with known ("planted") caption–group
//! associations, for end-to-end checks of the audit engine.
//!
//! Every intersectional group gets the same number of images drawn from an
//! isotropic Gaussian. Each planted caption owns a basis direction; the
//! images of its target group are pushed along that direction before
//! normalization, so the caption is most similar to that group and only
//! that group. Unplanted captions point in random directions orthogonal to
//! every planted direction.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vlaudit_core::taxonomy::{caption_manifest, ManifestEntry};
use vlaudit_core::{
    write_labeled, Axis, CategoryName, DemographicRecord, EmbeddingSet, Group, LabeledEmbeddings,
    Result, Taxonomy, TaxonomyCategory, TaxonomyWord, WordKind,
};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub seed: u64,
    pub dim: usize,
    pub per_group: usize,
    /// Shift added along a planted direction before normalization, in units
    /// of the per-coordinate noise standard deviation.
    pub strength: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: DEFAULT_SEED,
            dim: 64,
            per_group: 200,
            strength: 3.0,
        }
    }
}

/// (category, word, kind, planted target group label).
const WORDS: [(CategoryName, &str, WordKind, Option<&str>); 12] = [
    (CategoryName::Appearance, "tall", WordKind::Adjective, None),
    (
        CategoryName::Appearance,
        "elegant",
        WordKind::Adjective,
        Some("WhiteFemale"),
    ),
    (
        CategoryName::Behavioral,
        "ambitious",
        WordKind::Adjective,
        Some("EastAsianMale"),
    ),
    (CategoryName::Behavioral, "calm", WordKind::Adjective, None),
    (
        CategoryName::Behavioral,
        "curious",
        WordKind::Adjective,
        None,
    ),
    (
        CategoryName::CriminalJustice,
        "terrorist",
        WordKind::Noun,
        Some("MiddleEasternMale"),
    ),
    (CategoryName::CriminalJustice, "thief", WordKind::Noun, None),
    (
        CategoryName::Occupation,
        "homemaker",
        WordKind::Noun,
        Some("IndianFemale"),
    ),
    (CategoryName::Occupation, "pilot", WordKind::Noun, None),
    (CategoryName::Occupation, "teacher", WordKind::Noun, None),
    (CategoryName::Occupation, "baker", WordKind::Noun, None),
    (CategoryName::Occupation, "engineer", WordKind::Noun, None),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCaption {
    pub word: String,
    pub caption: String,
    pub group: String,
    pub direction: usize,
}

/// Ground truth written next to the fixture files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub seed: u64,
    pub dim: usize,
    pub per_group: usize,
    pub strength: f64,
    pub planted: Vec<PlantedCaption>,
    pub unplanted: Vec<String>,
}

pub struct Fixture {
    pub images: LabeledEmbeddings,
    pub taxonomy: Taxonomy,
    pub manifest: Vec<ManifestEntry>,
    pub captions: EmbeddingSet,
    pub truth: PlantedTruth,
}

/// Paths of a fixture written to disk.
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub images: PathBuf,
    pub metadata: PathBuf,
    pub captions: PathBuf,
    pub manifest: PathBuf,
    pub taxonomy: PathBuf,
    pub truth: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path) -> Self {
        FixturePaths {
            images: dir.join("images.emb"),
            metadata: dir.join("images.csv"),
            captions: dir.join("captions.emb"),
            manifest: dir.join("captions.manifest.json"),
            taxonomy: dir.join("taxonomy.json"),
            truth: dir.join("planted.json"),
        }
    }
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn fixture_taxonomy() -> Taxonomy {
    let mut categories: Vec<TaxonomyCategory> = Vec::new();
    for (cat, word, kind, _) in WORDS {
        match categories.last_mut() {
            Some(last) if last.name == cat => last.words.push(TaxonomyWord::new(word, kind)),
            _ => categories.push(TaxonomyCategory {
                name: cat,
                words: vec![TaxonomyWord::new(word, kind)],
            }),
        }
    }
    Taxonomy::new(categories).expect("fixture taxonomy is valid")
}

pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    let planted_count = WORDS.iter().filter(|w| w.3.is_some()).count();
    assert!(
        spec.dim > planted_count,
        "dimension must exceed the planted direction count"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let taxonomy = fixture_taxonomy();
    let manifest = caption_manifest(&taxonomy);

    let mut planted = Vec::new();
    let mut unplanted = Vec::new();
    let mut caption_rows = Vec::new();
    for (entry, (_, word, _, target)) in manifest.iter().zip(WORDS) {
        match target {
            Some(group) => {
                let direction = planted.len();
                let mut v = vec![0.0; spec.dim];
                v[direction] = 1.0;
                caption_rows.push(v);
                planted.push(PlantedCaption {
                    word: word.to_string(),
                    caption: entry.caption.clone(),
                    group: group.to_string(),
                    direction,
                });
            }
            None => {
                let mut v = vec![0.0; spec.dim];
                for x in &mut v[planted_count..] {
                    *x = gauss(&mut rng);
                }
                caption_rows.push(v);
                unplanted.push(word.to_string());
            }
        }
    }
    let captions = EmbeddingSet::from_rows(&caption_rows, false)?.l2_normalize()?;

    let mut labels: Vec<Group> = Axis::RaceGender
        .groups()
        .into_iter()
        .flat_map(|g| std::iter::repeat_n(g, spec.per_group))
        .collect();
    labels.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(labels.len());
    let mut metadata = Vec::with_capacity(labels.len());
    for (i, g) in labels.iter().enumerate() {
        let mut v: Vec<f64> = (0..spec.dim).map(|_| gauss(&mut rng)).collect();
        for p in &planted {
            if g.label() == p.group {
                v[p.direction] += spec.strength;
            }
        }
        rows.push(v);
        metadata.push(DemographicRecord {
            record_id: format!("img_{i:05}"),
            race: g.race.expect("intersection has a race"),
            gender: g.gender.expect("intersection has a gender"),
            age_band: None,
        });
    }
    let images = LabeledEmbeddings::new(
        EmbeddingSet::from_rows(&rows, false)?.l2_normalize()?,
        metadata,
    )?;

    Ok(Fixture {
        images,
        taxonomy,
        manifest,
        captions,
        truth: PlantedTruth {
            seed: spec.seed,
            dim: spec.dim,
            per_group: spec.per_group,
            strength: spec.strength,
            planted,
            unplanted,
        },
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| vlaudit_core::Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| vlaudit_core::Error::Format(format!("{}: {e}", path.display())))
}

impl Fixture {
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        std::fs::create_dir_all(dir).map_err(|e| vlaudit_core::Error::io(dir, e))?;
        let paths = FixturePaths::in_dir(dir);
        write_labeled(&self.images, &paths.images, &paths.metadata)?;
        self.captions.write(&paths.captions)?;
        write_json(&paths.manifest, &self.manifest)?;
        write_json(&paths.taxonomy, self.taxonomy.categories())?;
        write_json(&paths.truth, &self.truth)?;
        Ok(paths)
    }
}
