//! Surface-overlap text metrics: BLEU and ROUGE.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;

pub const BLEU_MAX_ORDER: usize = 4;

/// Lowercases, splits on whitespace and strips non-alphanumeric characters
/// from both ends of each token. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram total.
fn clipped_matches<S: AsRef<str>>(reference: &[S], hypothesis: &[S], n: usize) -> (usize, usize) {
    let hyp = ngram_counts(hypothesis, n);
    let refc = ngram_counts(reference, n);
    let matches = hyp
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hypothesis.len().saturating_sub(n - 1))
}

/// Sentence-level BLEU-4 with uniform weights and the standard brevity
/// penalty. A zero match count at order n ≥ 2 is smoothed to `1 / (total + 1)`.
pub fn bleu<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let (matches, total) = clipped_matches(reference, hypothesis, n);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (r, c) = (reference.len() as f64, hypothesis.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((brevity * (log_sum / BLEU_MAX_ORDER as f64).exp()).clamp(0.0, 1.0))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_measure(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-L F-measure (β = 1) from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> f64 {
    if reference.is_empty() && hypothesis.is_empty() {
        return 1.0;
    }
    f_measure(lcs_len(reference, hypothesis), hypothesis.len(), reference.len())
}

/// ROUGE-N F-measure from clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(reference: &[S], hypothesis: &[S], n: usize) -> f64 {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    if reference.is_empty() && hypothesis.is_empty() {
        return 1.0;
    }
    let (matches, hyp_total) = clipped_matches(reference, hypothesis, n);
    f_measure(matches, hyp_total, reference.len().saturating_sub(n - 1))
}

/// Which ROUGE score fills the report's single ROUGE column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[default]
    #[serde(rename = "rouge-1")]
    Unigram,
    #[serde(rename = "rouge-2")]
    Bigram,
    #[serde(rename = "rouge-l")]
    Lcs,
}

impl RougeVariant {
    pub fn score<S: AsRef<str>>(self, reference: &[S], hypothesis: &[S]) -> f64 {
        match self {
            RougeVariant::Unigram => rouge_n(reference, hypothesis, 1),
            RougeVariant::Bigram => rouge_n(reference, hypothesis, 2),
            RougeVariant::Lcs => rouge_l(reference, hypothesis),
        }
    }
}
