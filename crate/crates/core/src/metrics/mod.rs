//! Classification and description-similarity metrics.

pub mod classification;
pub mod embedding;
pub mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classification::{classification_report, confusion, f1_score, ClassificationReport, ConfusionCounts};
pub use embedding::{
    cosine, embed_average, sentence_embedding, CachedEmbedder, Cosine, EmbeddingVector, FixtureEmbeddings,
    HashedEmbedder, HttpEmbedder, Lexicon, SentenceEmbedder,
};
pub use text::{bleu, rouge_l, rouge_n, tokenize, RougeVariant};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("reference text has no tokens")]
    EmptyReference,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("word-vector lexicon is empty")]
    EmptyLexicon,
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("embedding provider unavailable: {0}")]
    Unavailable(String),
    #[error("{0}")]
    Io(String),
}

/// All four similarity scores for one reference/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub bleu: f64,
    pub rouge: f64,
    pub w2v_cosine: f64,
    pub st_cosine: f64,
    /// Notes on degenerate inputs (all tokens out of vocabulary, zero norm).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Bundles the resources needed to score free-text descriptions.
pub struct TextScorer<'a> {
    pub lexicon: &'a Lexicon,
    pub embedder: &'a dyn SentenceEmbedder,
    pub rouge: RougeVariant,
}

impl TextScorer<'_> {
    pub fn score(&self, reference: &str, hypothesis: &str) -> Result<SimilarityScores, MetricsError> {
        let r = tokenize(reference);
        let h = tokenize(hypothesis);
        let mut flags = Vec::new();

        let bleu = bleu(&r, &h)?;
        let rouge = self.rouge.score(&r, &h);

        let er = embed_average(&r, self.lexicon)?;
        let eh = embed_average(&h, self.lexicon)?;
        if er.degenerate {
            flags.push("reference fully out of vocabulary".to_string());
        }
        if eh.degenerate {
            flags.push("hypothesis fully out of vocabulary".to_string());
        }
        let w2v = cosine(&er.vector, &eh.vector)?;

        let sr = sentence_embedding(reference, self.embedder)?;
        let sh = sentence_embedding(hypothesis, self.embedder)?;
        let st = cosine(&sr, &sh)?;
        if st.degenerate {
            flags.push("zero-norm sentence embedding".to_string());
        }

        Ok(SimilarityScores {
            bleu,
            rouge,
            w2v_cosine: w2v.value,
            st_cosine: st.value,
            flags,
        })
    }
}
