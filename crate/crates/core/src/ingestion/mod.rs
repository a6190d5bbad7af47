//! Dataset loading, built-in featurization, and the embedding file format.

mod dataset;
mod embedding;
mod featurize;

pub use dataset::{Dataset, Label, LabeledExample, Split};
pub use embedding::{EmbeddingMatrix, RowWarning, RVHE_HEADER_LEN, RVHE_MAGIC, RVHE_VERSION};
pub use featurize::{featurize, featurize_texts, fnv1a64, hash_text, FeaturizerConfig, NgramRange};
