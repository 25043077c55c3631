//! Demographic bias audits for image-text embedding spaces.
//!
//! Images and captions live in one embedding space. For each caption
//! rendered from a bias taxonomy the engine measures how strongly it
//! associates with each demographic group of a labeled face-image set
//! (C-ASC effect size), which groups dominate its top-k retrievals, and how
//! concentrated those retrievals are (normalized entropy). A separate
//! scanner counts gendered-pronoun co-occurrence in caption corpora.
//!
//! ```no_run
//! use std::path::Path;
//! use vlaudit_core::audit::{run_model_audit, AuditContext, AuditOptions, ModelAuditReport};
//! use vlaudit_core::{load_labeled, EmbeddingSet, Taxonomy};
//!
//! # fn main() -> vlaudit_core::Result<()> {
//! let images = load_labeled(Path::new("images.emb"), Path::new("images.csv"))?;
//! let captions = EmbeddingSet::read(Path::new("captions.emb"))?;
//! let taxonomy = Taxonomy::bundled();
//! let ctx = AuditContext::new(&images)?;
//! let categories = run_model_audit(taxonomy.categories(), &captions, &ctx, &AuditOptions::default())?;
//! let report = ModelAuditReport::new("my-model", "my-faces", 100, categories)?;
//! println!("{}", report.to_json()?);
//! # Ok(())
//! # }
//! ```

pub mod audit;
pub mod corpus_scan;
pub mod demographics;
pub mod embedding_store;
pub mod error;
pub mod metrics;
pub mod taxonomy;

pub use demographics::{Axis, DemographicRecord, Gender, Group, GroupMask, Race};
pub use embedding_store::{load_labeled, write_labeled, EmbeddingSet, LabeledEmbeddings};
pub use error::{Error, Result};
pub use taxonomy::{Caption, CategoryName, Taxonomy, TaxonomyCategory, TaxonomyWord, WordKind};
