//! Separate factorization of the term-document and word-context matrices,
//! followed by a merge of their topic bases.
//!
//! 1. `X ~ W1 H1` and `M ~ W2 H2`, each with its own rank selection.
//! 2. `[W1 | W2] ~ W H*` with column-normalized inputs; co-linear topics
//!    from the two bases collapse onto one column of `W`.
//! 3. `H = argmin_{H >= 0} ||X - W H||`, and every document goes to the
//!    topic with the largest coordinate.

use std::cmp::Ordering;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmf::{solve_h, NmfConfig};
use crate::selection::{nmfk, SelectionConfig, SelectionReport};
use crate::sparse::SparseMatrix;
use crate::text::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub selection_x: SelectionConfig,
    pub selection_m: SelectionConfig,
    /// Ensemble settings for the merge step. Its rank range is resolved at
    /// run time by [`SplitConfig::joint_selection`].
    pub selection_joint: SelectionConfig,
    pub joint_k_min: Option<usize>,
    pub joint_k_max: Option<usize>,
    pub top_n_words: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let mut selection_m = SelectionConfig::new(1, 10);
        selection_m.symmetric = true;
        SplitConfig {
            selection_x: SelectionConfig::new(1, 10),
            selection_m,
            selection_joint: SelectionConfig::new(1, 20),
            joint_k_min: None,
            joint_k_max: None,
            top_n_words: 20,
        }
    }
}

impl SplitConfig {
    /// Rank scan for the merge of a `k1`- and a `k2`-column basis with `rows`
    /// rows. Defaults to `[min(k1, k2), k1 + k2]`; explicit bounds are
    /// clamped so the merged rank never exceeds `k1 + k2`.
    pub fn joint_selection(&self, k1: usize, k2: usize, rows: usize) -> SelectionConfig {
        let ceiling = (k1 + k2).min(rows).max(1);
        let k_max = self.joint_k_max.unwrap_or(ceiling).clamp(1, ceiling);
        let k_min = self.joint_k_min.unwrap_or(k1.min(k2)).clamp(1, k_max);
        SelectionConfig {
            k_min,
            k_max,
            ..self.selection_joint.clone()
        }
    }
}

/// A consensus basis with its regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub report: SelectionReport,
}

impl Factorization {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }
}

fn factorize(x: &SparseMatrix, selection: &SelectionConfig) -> Result<Factorization> {
    let report = nmfk(x, selection)?;
    let w = report.consensus_w.clone();
    let h = solve_h(x, w.view(), &selection.nmf)?;
    Ok(Factorization { w, h, report })
}

/// Rank selection and consensus basis for the TF-IDF matrix. A fallback
/// rank is kept and flagged in the report.
pub fn factorize_x(x: &SparseMatrix, selection: &SelectionConfig) -> Result<Factorization> {
    factorize(x, selection)
}

/// Same as [`factorize_x`] for the symmetric SPPMI matrix. Ensemble noise is
/// always applied symmetrically.
pub fn factorize_m(m: &SparseMatrix, selection: &SelectionConfig) -> Result<Factorization> {
    if m.nnz() == 0 {
        return Err(Error::DegenerateMatrix(
            "the SPPMI matrix is all zero; the shift is too large for this corpus".into(),
        ));
    }
    let selection = SelectionConfig {
        symmetric: true,
        ..selection.clone()
    };
    factorize(m, &selection)
}

fn unit_columns(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// `[W1 | W2]` with every column scaled to unit L2 norm.
pub fn concat_normalized(w1: ArrayView2<'_, f64>, w2: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if w1.nrows() != w2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "W1 has {} rows, W2 has {}",
            w1.nrows(),
            w2.nrows()
        )));
    }
    Ok(concatenate![Axis(1), unit_columns(w1), unit_columns(w2)])
}

/// Factorizes the concatenated bases into `k <= k1 + k2` common topics.
/// Returns `W` and the mixing matrix `H*`.
pub fn joint_factorize(
    wcat: ArrayView2<'_, f64>,
    selection: &SelectionConfig,
) -> Result<Factorization> {
    if selection.k_max > wcat.ncols() {
        return Err(Error::InvalidRank {
            k: selection.k_max,
            max: wcat.ncols(),
        });
    }
    let sparse = SparseMatrix::from_dense(wcat)?;
    factorize(&sparse, selection)
}

/// Document coordinates in the merged topic space.
pub fn final_regression(
    x: &SparseMatrix,
    w: ArrayView2<'_, f64>,
    config: &NmfConfig,
) -> Result<Array2<f64>> {
    solve_h(x, w, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    /// Topic of every document (column of `H`).
    pub topics: Vec<usize>,
    /// The winning coordinate of every document.
    pub max_weight: Vec<f64>,
    /// Documents whose column of `H` is all zero; they default to topic 0.
    pub unassigned: Vec<usize>,
    /// Number of documents per topic.
    pub histogram: Vec<usize>,
}

/// Argmax over each column of `H`; ties go to the smaller topic index.
pub fn assign_documents(h: ArrayView2<'_, f64>) -> Assignments {
    let k = h.nrows();
    let mut topics = Vec::with_capacity(h.ncols());
    let mut max_weight = Vec::with_capacity(h.ncols());
    let mut unassigned = Vec::new();
    let mut histogram = vec![0usize; k];
    for (j, col) in h.axis_iter(Axis(1)).enumerate() {
        let (best, weight) =
            col.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bw), (i, &w)| {
                    if w > bw {
                        (i, w)
                    } else {
                        (bi, bw)
                    }
                });
        if weight <= 0.0 {
            unassigned.push(j);
        }
        if k > 0 {
            histogram[best] += 1;
        }
        topics.push(best);
        max_weight.push(weight.max(0.0));
    }
    Assignments {
        topics,
        max_weight,
        unassigned,
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: usize,
    pub terms: Vec<TermWeight>,
}

/// The `top_n` heaviest terms of every column of `W`, heaviest first, equal
/// weights in lexicographic order.
pub fn top_words(w: ArrayView2<'_, f64>, vocab: &Vocabulary, top_n: usize) -> Result<Vec<Topic>> {
    if w.nrows() != vocab.len() {
        return Err(Error::ShapeMismatch(format!(
            "W has {} rows for a vocabulary of {} terms",
            w.nrows(),
            vocab.len()
        )));
    }
    let take = top_n.min(vocab.len());
    Ok(w.axis_iter(Axis(1))
        .enumerate()
        .map(|(topic_id, col)| {
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&a, &b| match col[b].total_cmp(&col[a]) {
                Ordering::Equal => vocab.term(a).cmp(vocab.term(b)),
                o => o,
            });
            Topic {
                topic_id,
                terms: order
                    .into_iter()
                    .take(take)
                    .map(|i| TermWeight {
                        term: vocab.term(i).to_owned(),
                        weight: col[i],
                    })
                    .collect(),
            }
        })
        .collect())
}

/// The three rank-selection reports of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReports {
    pub x: SelectionReport,
    pub m: SelectionReport,
    pub joint: SelectionReport,
}

/// Final model: merged topics, document coordinates and assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    /// terms x k
    pub w: Array2<f64>,
    /// k x documents
    pub h: Array2<f64>,
    pub document_ids: Vec<String>,
    pub assignments: Assignments,
    pub topics: Vec<Topic>,
    pub k1: usize,
    pub k2: usize,
    pub k: usize,
    pub reports: SplitReports,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn joint_range_defaults_and_clamps() {
        let cfg = SplitConfig::default();
        let sel = cfg.joint_selection(3, 5, 100);
        assert_eq!((sel.k_min, sel.k_max), (3, 8));
        let sel = cfg.joint_selection(1, 1, 100);
        assert_eq!((sel.k_min, sel.k_max), (1, 2));
        let cfg = SplitConfig {
            joint_k_min: Some(4),
            joint_k_max: Some(30),
            ..SplitConfig::default()
        };
        let sel = cfg.joint_selection(2, 3, 100);
        assert_eq!((sel.k_min, sel.k_max), (4, 5));
        let sel = cfg.joint_selection(2, 3, 3);
        assert_eq!((sel.k_min, sel.k_max), (3, 3));
    }

    #[test]
    fn concatenation_normalizes_and_orders_columns() {
        let w1 = array![[2.0, 0.0], [0.0, 3.0]];
        let w2 = array![[1.0, 1.0, 0.0], [1.0, 0.0, 5.0]];
        let cat = concat_normalized(w1.view(), w2.view()).unwrap();
        assert_eq!(cat.ncols(), 5);
        for col in cat.columns() {
            assert!((col.dot(&col) - 1.0).abs() < 1e-15);
        }
        assert_eq!(cat.column(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(cat.column(4).to_vec(), vec![0.0, 1.0]);
        let bad = array![[1.0]];
        assert!(matches!(
            concat_normalized(w1.view(), bad.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn self_concatenation_has_duplicate_directions() {
        let w = array![[1.0, 0.2], [0.5, 2.0], [0.0, 1.0]];
        let cat = concat_normalized(w.view(), w.view()).unwrap();
        let cos = cat.column(0).dot(&cat.column(2));
        assert!((cos - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_assignment() {
        let h = array![[0.1, 0.5, 0.0], [0.9, 0.5, 0.0]];
        let a = assign_documents(h.view());
        assert_eq!(a.topics, vec![1, 0, 0]);
        assert_eq!(a.unassigned, vec![2]);
        assert_eq!(a.histogram, vec![2, 1]);
        assert_eq!(a.histogram.iter().sum::<usize>(), 3);
        let scaled = assign_documents((&h * 7.5).view());
        assert_eq!(scaled.topics, a.topics);
    }

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_terms((0..n).map(|i| (format!("t{i:02}"), 1)).collect()).unwrap()
    }

    #[test]
    fn top_words_order_and_ties() {
        let v = vocab(10);
        let mut w = Array2::zeros((10, 2));
        w[[7, 0]] = 1.0;
        w[[3, 1]] = 0.5;
        w[[1, 1]] = 0.5;
        w[[9, 1]] = 0.7;
        let topics = top_words(w.view(), &v, 3).unwrap();
        assert_eq!(topics[0].terms[0].term, "t07");
        let names: Vec<_> = topics[1].terms.iter().map(|t| t.term.as_str()).collect();
        assert_eq!(names, ["t09", "t01", "t03"]);

        let top20 = top_words(w.view(), &v, 20).unwrap();
        assert_eq!(top20[1].terms.len(), 10);
        assert_eq!(&top20[1].terms[..3], &topics[1].terms[..]);
        assert!(top20[1]
            .terms
            .windows(2)
            .all(|p| p[0].weight >= p[1].weight));

        assert!(top_words(w.view(), &vocab(4), 3).is_err());
    }

    #[test]
    fn degenerate_word_context_matrix() {
        assert!(matches!(
            factorize_m(&SparseMatrix::zeros(3, 3), &SelectionConfig::new(1, 2)),
            Err(Error::DegenerateMatrix(_))
        ));
    }
}
