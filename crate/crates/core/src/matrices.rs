//! Term-document and word-context matrices.
//!
//! `X` is the TF-IDF matrix (terms x documents). `M` is the shifted positive
//! PMI transform of windowed co-occurrence counts (terms x terms).

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::text::{Corpus, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticConfig {
    /// Tokens at distance `< window` count as co-occurring.
    pub window: usize,
    /// SPPMI shift `s`; `ln s` is subtracted from every PMI value.
    pub shift: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            window: 100,
            shift: 4.0,
        }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if !(self.shift.is_finite() && self.shift >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "shift must be a finite value >= 1, got {}",
                self.shift
            )));
        }
        Ok(())
    }
}

fn vocab_indices<'a>(
    doc: &'a [String],
    vocab: &'a Vocabulary,
) -> impl Iterator<Item = Option<usize>> + 'a {
    doc.iter().map(|t| vocab.index_of(t))
}

/// TF-IDF matrix with raw counts, smoothed idf `ln((1+n)/(1+df)) + 1` and
/// unit L2 columns.
///
/// Document frequencies are counted on `corpus` itself. Tokens outside the
/// vocabulary are ignored; a document with none inside it is an error.
pub fn build_tfidf(corpus: &Corpus, vocab: &Vocabulary) -> Result<SparseMatrix> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let m = vocab.len();

    let counts: Vec<Vec<(usize, f64)>> = corpus
        .documents()
        .iter()
        .map(|doc| {
            let mut tf: HashMap<usize, f64> = HashMap::new();
            for i in vocab_indices(doc.tokens(), vocab).flatten() {
                *tf.entry(i).or_default() += 1.0;
            }
            if tf.is_empty() {
                return Err(Error::EmptyColumn(doc.id().to_owned()));
            }
            let mut col: Vec<(usize, f64)> = tf.into_iter().collect();
            col.sort_unstable_by_key(|&(i, _)| i);
            Ok(col)
        })
        .collect::<Result<_>>()?;

    let mut df = vec![0usize; m];
    for col in &counts {
        for &(i, _) in col {
            df[i] += 1;
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();

    let mut triplets = Vec::with_capacity(counts.iter().map(Vec::len).sum());
    for (j, col) in counts.iter().enumerate() {
        let weighted: Vec<(usize, f64)> = col.iter().map(|&(i, tf)| (i, tf * idf[i])).collect();
        let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        triplets.extend(weighted.into_iter().map(|(i, v)| (i, j, v / norm)));
    }
    SparseMatrix::from_triplets(m, n, triplets)
}

/// Symmetric windowed co-occurrence counts.
///
/// Every pair of in-vocabulary tokens at positions `p < q` of the same
/// document with `q - p < window` adds one to `(i, j)` and one to `(j, i)`.
/// Out-of-vocabulary tokens still occupy positions.
pub fn build_cooccurrence(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &SemanticConfig,
) -> Result<SparseMatrix> {
    config.validate()?;
    let m = vocab.len();
    // Integer counts merge exactly, so the reduction order does not matter.
    let counts: HashMap<(usize, usize), u64> = corpus
        .documents()
        .par_iter()
        .fold(HashMap::new, |mut acc, doc| {
            let ids: Vec<Option<usize>> = vocab_indices(doc.tokens(), vocab).collect();
            for (p, a) in ids.iter().enumerate() {
                let Some(a) = *a else { continue };
                let end = ids.len().min(p.saturating_add(config.window));
                for b in ids[p + 1..end].iter().flatten() {
                    *acc.entry((a, *b)).or_insert(0) += 1;
                    *acc.entry((*b, a)).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (key, c) in b {
                *a.entry(key).or_insert(0) += c;
            }
            a
        });
    SparseMatrix::from_triplets(m, m, counts.into_iter().map(|((i, j), c)| (i, j, c as f64)))
}

/// Shifted positive PMI: `max(ln(C_ij * D / (r_i * r_j)) - ln s, 0)` with row
/// sums `r` and total `D`. Zero counts stay zero.
pub fn sppmi(cooc: &SparseMatrix, shift: f64) -> Result<SparseMatrix> {
    if cooc.n_rows() != cooc.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "co-occurrence matrix must be square, got {}x{}",
            cooc.n_rows(),
            cooc.n_cols()
        )));
    }
    if !(shift.is_finite() && shift > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "shift must be positive, got {shift}"
        )));
    }
    let total = cooc.sum();
    if total <= 0.0 {
        return Err(Error::DegenerateMatrix(
            "co-occurrence matrix has no counts".into(),
        ));
    }
    let rows = cooc.row_sums();
    let log_shift = shift.ln();
    cooc.map_entries(|i, j, c| {
        // r_i * r_j commutes exactly, which keeps the result symmetric
        let pmi = (c * total / (rows[i] * rows[j])).ln();
        (pmi - log_shift).max(0.0)
    })
}
