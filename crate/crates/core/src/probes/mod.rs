//! Linear probes of per-layer encoder states: log mel energies (acoustic)
//! and word embeddings (semantic), scored by held-out R².

mod embedding;
mod filterbank;
mod probe;
mod sweep;
mod words;

pub use embedding::{EmbeddingTable, EMBEDDING_DIM};
pub use filterbank::{compute_filterbank, hz_to_mel, mel_centers, mel_filters, mel_to_hz, FilterbankConfig, FilterbankFeatures};
pub use probe::{fit_probe, r2_score, ProbeFit, ProbeScores};
pub use sweep::{probe_csv, probe_sweep, ProbeCell, ProbeKind, ProbeSweepConfig, PRETRAINED_ID};
pub use words::{align_features_to_words, AlignedWord, Anchor, WordAlignment};
