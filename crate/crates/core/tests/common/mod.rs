//! Brute-force oracles and synthetic data shared by the integration tests.
//! The oracles are written from the definitions with dense loops and share
//! no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use senmfk::text::{Corpus, Document, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Alphabetic name of a small integer, so it survives tokenization.
pub fn word(prefix: &str, mut i: usize) -> String {
    let mut s = String::from(prefix);
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    s
}

/// Tokenized documents over `terms` plus a few out-of-vocabulary words.
/// Every document holds at least one vocabulary term.
pub fn random_docs(
    rng: &mut impl Rng,
    max_docs: usize,
    max_terms: usize,
    max_len: usize,
) -> (Vec<Vec<String>>, Vec<String>) {
    let n_terms = rng.random_range(1..=max_terms);
    let terms: Vec<String> = (0..n_terms).map(|i| word("v", i)).collect();
    let oov: Vec<String> = (0..3).map(|i| word("oov", i)).collect();
    let n_docs = rng.random_range(1..=max_docs);
    let docs = (0..n_docs)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let mut doc: Vec<String> = (0..len)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        oov[rng.random_range(0..oov.len())].clone()
                    } else {
                        terms[rng.random_range(0..n_terms)].clone()
                    }
                })
                .collect();
            if doc.iter().all(|t| t.starts_with("oov")) {
                doc.push(terms[rng.random_range(0..n_terms)].clone());
            }
            doc
        })
        .collect();
    (docs, terms)
}

pub fn to_corpus(docs: &[Vec<String>]) -> Corpus {
    Corpus::new(
        docs.iter()
            .enumerate()
            .map(|(j, d)| Document::new(format!("doc{j}"), d.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn to_vocab(docs: &[Vec<String>], terms: &[String]) -> Vocabulary {
    Vocabulary::from_terms(
        terms
            .iter()
            .map(|t| (t.clone(), docs.iter().filter(|d| d.contains(t)).count()))
            .collect(),
    )
    .unwrap()
}

/// Dense m x n TF-IDF: raw counts, idf = ln((1+n)/(1+df)) + 1, unit columns.
pub fn oracle_tfidf(docs: &[Vec<String>], terms: &[String]) -> Vec<Vec<f64>> {
    let n = docs.len();
    let mut x = vec![vec![0.0; n]; terms.len()];
    for (i, term) in terms.iter().enumerate() {
        let df = docs.iter().filter(|d| d.iter().any(|t| t == term)).count();
        let idf = ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0;
        for (j, d) in docs.iter().enumerate() {
            let tf = d.iter().filter(|t| *t == term).count();
            x[i][j] = tf as f64 * idf;
        }
    }
    for j in 0..n {
        let norm: f64 = x.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt();
        for row in x.iter_mut() {
            row[j] /= norm;
        }
    }
    x
}

/// Double loop over all position pairs of every document.
pub fn oracle_cooccurrence(docs: &[Vec<String>], terms: &[String], window: usize) -> Vec<Vec<u64>> {
    let index: HashMap<&str, usize> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let m = terms.len();
    let mut c = vec![vec![0u64; m]; m];
    for d in docs {
        for p in 0..d.len() {
            for q in 0..d.len() {
                if p == q || p.abs_diff(q) >= window {
                    continue;
                }
                if let (Some(&i), Some(&j)) = (index.get(d[p].as_str()), index.get(d[q].as_str())) {
                    c[i][j] += 1;
                }
            }
        }
    }
    c
}

pub fn oracle_sppmi(c: &[Vec<u64>], shift: f64) -> Vec<Vec<f64>> {
    let m = c.len();
    let r: Vec<f64> = c.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let d: f64 = r.iter().sum();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if c[i][j] > 0 {
                let pmi = (c[i][j] as f64 * d / (r[i] * r[j])).ln();
                out[i][j] = (pmi - shift.ln()).max(0.0);
            }
        }
    }
    out
}

fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

/// Per-point silhouette with cosine distance; singletons score 0.
pub fn oracle_silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    (0..points.len())
        .map(|i| {
            let mean_to = |c: usize| {
                let members: Vec<usize> = (0..points.len())
                    .filter(|&j| j != i && labels[j] == c)
                    .collect();
                members
                    .iter()
                    .map(|&j| cosine_distance(&points[i], &points[j]))
                    .sum::<f64>()
                    / members.len() as f64
            };
            if labels.iter().filter(|&&l| l == labels[i]).count() == 1 {
                return 0.0;
            }
            let a = mean_to(labels[i]);
            let b = clusters
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| mean_to(c))
                .fold(f64::INFINITY, f64::min);
            (b - a) / a.max(b)
        })
        .collect()
}

pub fn objective(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>) -> f64 {
    let r = &x - &w.dot(&h);
    r.iter().map(|v| v * v).sum()
}

/// `min_{H >= 0} ||X - W H||_F^2` by accelerated projected gradient with
/// step 1/L, L the largest eigenvalue of WᵀW.
pub fn oracle_nnls(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, iters: usize) -> Array2<f64> {
    let wtw = w.t().dot(&w);
    let wtx = w.t().dot(&x);
    let k = wtw.nrows();
    let mut v = ndarray::Array1::<f64>::ones(k);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let next = wtw.dot(&v);
        lambda = next.dot(&next).sqrt();
        v = next / lambda;
    }
    let step = 1.0 / lambda;
    let mut h = Array2::<f64>::zeros((k, x.ncols()));
    let mut y = h.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = wtw.dot(&y) - &wtx;
        let next = (&y - &(grad * step)).mapv(|v| v.max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + &((&next - &h) * ((t - 1.0) / t_next));
        h = next;
        t = t_next;
    }
    h
}

/// Best one-to-one column pairing by brute force over permutations.
pub fn best_matching_cosines(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<f64> {
    let k = a.ncols();
    let cos = |i: usize, j: usize| {
        let (u, v) = (a.column(i), b.column(j));
        u.dot(&v) / (u.dot(&u).sqrt() * v.dot(&v).sqrt())
    };
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (f64::NEG_INFINITY, vec![]);
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = p.iter().enumerate().map(|(i, &j)| cos(i, j)).sum();
        if score > best.0 {
            best = (
                score,
                p.iter().enumerate().map(|(i, &j)| cos(i, j)).collect(),
            );
        }
    });
    best.1
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

/// Non-negative basis whose columns have disjoint row supports.
pub fn disjoint_basis(rng: &mut impl Rng, m: usize, k: usize) -> Array2<f64> {
    let mut w = Array2::zeros((m, k));
    for i in 0..m {
        w[[i, i % k]] = rng.random_range(0.5..1.5);
    }
    w
}

/// `W_true H_true` times `(1 + noise * u)`, `u` uniform in [-1, 1]. Each
/// column of `H_true` has one dominant topic and occasional weak ones.
pub fn low_rank(rng: &mut impl Rng, m: usize, n: usize, k: usize, noise: f64) -> Array2<f64> {
    let w = disjoint_basis(rng, m, k);
    let mut h = Array2::zeros((k, n));
    for j in 0..n {
        h[[j % k, j]] = rng.random_range(1.0..2.0);
        for t in 0..k {
            if t != j % k && rng.random_bool(0.2) {
                h[[t, j]] = rng.random_range(0.0..0.3);
            }
        }
    }
    w.dot(&h)
        .mapv(|v| v * (1.0 + noise * rng.random_range(-1.0..=1.0)))
}

pub fn random_nonneg(rng: &mut impl Rng, m: usize, n: usize, density: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| {
        if rng.random_bool(density) {
            rng.random_range(0.0..1.0)
        } else {
            0.0
        }
    })
}

/// Documents drawn uniformly from disjoint per-topic word lists, plus
/// occasional background words shared by all topics. Returns `(id, text,
/// label)`.
pub fn topic_corpus(
    rng: &mut impl Rng,
    n_docs: usize,
    n_topics: usize,
    words_per_topic: usize,
    doc_len: usize,
    background: f64,
) -> Vec<(String, String, usize)> {
    let prefixes = ["alp", "bet", "gam", "del", "eps", "zet", "eta", "the"];
    let shared: Vec<String> = (0..40).map(|i| word("com", i)).collect();
    (0..n_docs)
        .map(|d| {
            let label = d % n_topics;
            let words: Vec<String> = (0..doc_len)
                .map(|_| {
                    if rng.random_bool(background) {
                        shared[rng.random_range(0..shared.len())].clone()
                    } else {
                        word(prefixes[label], rng.random_range(0..words_per_topic))
                    }
                })
                .collect();
            (format!("doc{d:04}"), words.join(" "), label)
        })
        .collect()
}

pub fn write_corpus(path: &Path, docs: &[(String, String, usize)]) {
    let mut f = std::fs::File::create(path).unwrap();
    for (id, text, _) in docs {
        let line = serde_json::json!({ "id": id, "text": text });
        writeln!(f, "{line}").unwrap();
    }
}

/// Fraction of documents whose topic is the majority topic of their label.
pub fn purity(topics: &[usize], labels: &[usize]) -> f64 {
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for (&t, &l) in topics.iter().zip(labels) {
        *counts.entry((t, l)).or_default() += 1;
    }
    let clusters: BTreeSet<usize> = topics.iter().copied().collect();
    let hits: usize = clusters
        .iter()
        .map(|&t| {
            counts
                .iter()
                .filter(|((tt, _), _)| *tt == t)
                .map(|(_, &c)| c)
                .max()
                .unwrap_or(0)
        })
        .sum();
    hits as f64 / topics.len() as f64
}

pub fn dense(x: &senmfk::SparseMatrix) -> Array2<f64> {
    x.to_dense()
}
