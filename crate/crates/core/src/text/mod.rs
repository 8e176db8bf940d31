//! Tokenization, document filtering and vocabulary construction.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};

const BUNDLED_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Lowercases `raw` and splits it on every non-alphabetic character.
///
/// Fragments shorter than two characters are dropped. Digits act as
/// separators, so purely numeric tokens never survive. Stopwords are kept;
/// they are removed by [`filter_documents`].
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphabetic())
        .filter(|piece| piece.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let id = id.into();
        if tokens.iter().any(String::is_empty) {
            return Err(Error::EmptyToken(id));
        }
        Ok(Document { id, tokens })
    }

    /// Tokenizes `text` with [`tokenize`].
    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Document {
            id: id.into(),
            tokens: tokenize(text),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ordered documents with unique identifiers. Document order fixes the
/// column order of the term-document matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateDocumentId(doc.id.clone()));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(Document::id)
    }

    /// Splits the corpus into documents with at least one in-vocabulary
    /// token and the ids of those without any.
    pub fn retain_in_vocabulary(&self, vocab: &Vocabulary) -> (Corpus, Vec<String>) {
        let (kept, dropped): (Vec<&Document>, Vec<&Document>) = self
            .documents
            .iter()
            .partition(|doc| doc.tokens.iter().any(|t| vocab.index_of(t).is_some()));
        (
            Corpus {
                documents: kept.into_iter().cloned().collect(),
            },
            dropped.into_iter().map(|d| d.id.clone()).collect(),
        )
    }
}

/// Term list in row order with document frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(term, doc_freq)` pairs in row order.
    pub fn from_terms(entries: Vec<(String, usize)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut terms = Vec::with_capacity(entries.len());
        let mut doc_freq = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (term, df)) in entries.into_iter().enumerate() {
            if term.is_empty() {
                return Err(Error::InvalidConfig("empty vocabulary term".into()));
            }
            if index.insert(term.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary term {term:?}"
                )));
            }
            terms.push(term);
            doc_freq.push(df);
        }
        Ok(Vocabulary {
            terms,
            index,
            doc_freq,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    pub fn doc_freqs(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub min_doc_tokens: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub stopwords: HashSet<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            min_doc_tokens: 20,
            min_df: 5,
            max_df_ratio: 0.5,
            stopwords: bundled_stopwords(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_df_ratio > 0.0 && self.max_df_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "max_df_ratio must lie in (0, 1], got {}",
                self.max_df_ratio
            )));
        }
        if self.min_df < 1 {
            return Err(Error::InvalidConfig("min_df must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest document frequency a term may have in a corpus of `n_docs`.
    pub fn max_df(&self, n_docs: usize) -> usize {
        // The small offset keeps products such as 0.29 * 100 from flooring to 28.
        (self.max_df_ratio * n_docs as f64 + 1e-9).floor() as usize
    }
}

/// The built-in English stopword list.
pub fn bundled_stopwords() -> HashSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS)
}

/// Parses a one-term-per-line stopword list. Blank lines are ignored and
/// terms are lowercased.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Removes stopwords from every document and keeps, in order, the documents
/// left with at least `min_doc_tokens` tokens.
pub fn filter_documents(corpus: &Corpus, config: &PipelineConfig) -> Corpus {
    let documents = corpus
        .documents
        .iter()
        .filter_map(|doc| {
            let tokens: Vec<String> = doc
                .tokens
                .iter()
                .filter(|t| !config.stopwords.contains(t.as_str()))
                .cloned()
                .collect();
            (tokens.len() >= config.min_doc_tokens).then(|| Document {
                id: doc.id.clone(),
                tokens,
            })
        })
        .collect();
    Corpus { documents }
}

/// Counts, for every term, the number of documents containing it.
pub fn document_frequencies(corpus: &Corpus) -> BTreeMap<&str, usize> {
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &corpus.documents {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for term in unique {
            *df.entry(term).or_default() += 1;
        }
    }
    df
}

/// Keeps the terms whose document frequency lies in
/// `[min_df, floor(max_df_ratio * n)]`, sorted lexicographically.
pub fn build_vocabulary(corpus: &Corpus, config: &PipelineConfig) -> Result<Vocabulary> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ceiling = config.max_df(corpus.len());
    let entries: Vec<(String, usize)> = document_frequencies(corpus)
        .into_iter()
        .filter(|&(_, df)| df >= config.min_df && df <= ceiling)
        .map(|(term, df)| (term.to_owned(), df))
        .collect();
    Vocabulary::from_terms(entries)
}
