//! File-backed pipeline stages with a run manifest.
//!
//! Every stage reads its inputs from the workspace directory and writes its
//! outputs back to it, so a run can be resumed stage by stage. A stage is
//! skipped on resume when its fingerprint (stage name, relevant settings and
//! input digests) and the digests of its outputs all match the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::io::{
    load_dense, load_sparse, load_tokenized_corpus, load_vocabulary, read_raw_corpus, save_dense,
    save_json, save_sparse, save_tokenized_corpus, save_vocabulary,
};
use crate::matrices::{build_cooccurrence, build_tfidf, sppmi};
use crate::selection::SelectionReport;
use crate::split::{
    assign_documents, concat_normalized, factorize_m, factorize_x, final_regression,
    joint_factorize, top_words, SplitReports, Topic, TopicModel,
};
use crate::text::{build_vocabulary, filter_documents};

pub const MANIFEST: &str = "manifest.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const TOPICS: &str = "topics.json";
pub const ASSIGNMENTS: &str = "assignments.csv";
pub const HISTOGRAM: &str = "histogram.csv";

const ENSEMBLE_KEYS: [&str; 6] = [
    "perturbations",
    "delta",
    "sil-threshold",
    "seed",
    "max-iter",
    "tol",
];

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Preprocess,
    Matrices,
    FactorizeX,
    FactorizeM,
    Joint,
    Regression,
    Topics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Preprocess,
        Stage::Matrices,
        Stage::FactorizeX,
        Stage::FactorizeM,
        Stage::Joint,
        Stage::Regression,
        Stage::Topics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Matrices => "matrices",
            Stage::FactorizeX => "factorize_x",
            Stage::FactorizeM => "factorize_m",
            Stage::Joint => "joint",
            Stage::Regression => "regression",
            Stage::Topics => "topics",
        }
    }

    /// Workspace files read by the stage. The raw corpus of `Preprocess`
    /// lives outside the workspace and is not listed.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Preprocess => &[],
            Stage::Matrices => &[CORPUS, VOCAB],
            Stage::FactorizeX => &["X.mtx"],
            Stage::FactorizeM => &["M.mtx"],
            Stage::Joint => &["W1.mtx", "W2.mtx"],
            Stage::Regression => &["X.mtx", "W.mtx"],
            Stage::Topics => &[CORPUS, VOCAB, "W.mtx", "H.mtx"],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Preprocess => &[CORPUS, VOCAB],
            Stage::Matrices => &["X.mtx", "cooc.mtx", "M.mtx"],
            Stage::FactorizeX => &["W1.mtx", "H1.mtx", "selection_x.json"],
            Stage::FactorizeM => &["W2.mtx", "H2.mtx", "selection_m.json"],
            Stage::Joint => &["W.mtx", "Hstar.mtx", "selection_joint.json"],
            Stage::Regression => &["H.mtx"],
            Stage::Topics => &[TOPICS, ASSIGNMENTS, HISTOGRAM],
        }
    }

    /// Settings the stage output depends on.
    fn keys(self) -> Vec<&'static str> {
        let mut keys = match self {
            Stage::Preprocess => vec!["min-doc-tokens", "min-df", "max-df", "stopwords"],
            Stage::Matrices => vec!["window", "shift"],
            Stage::FactorizeX => vec!["kx-min", "kx-max"],
            Stage::FactorizeM => vec!["km-min", "km-max"],
            Stage::Joint => vec!["kj-min", "kj-max"],
            Stage::Regression => vec!["seed", "max-iter", "tol"],
            Stage::Topics => vec!["top-n"],
        };
        if matches!(self, Stage::FactorizeX | Stage::FactorizeM | Stage::Joint) {
            keys.extend(ENSEMBLE_KEYS);
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

/// Everything needed to reproduce a run: settings, input digests and what
/// every stage produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub input: Option<PathBuf>,
    pub input_digests: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// The recorded settings.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (k, v) in &self.config {
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.name == stage.name())
    }

    fn put(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.name != record.name);
        self.stages.push(record);
        let order = |name: &str| Stage::ALL.iter().position(|s| s.name() == name);
        self.stages.sort_by_key(|r| order(&r.name));
    }

    /// Workspace files whose current digest differs from the one recorded
    /// when they were written.
    pub fn drift(&self, workspace: &Workspace) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for record in &self.stages {
            for (file, digest) in &record.outputs {
                let path = workspace.path(file);
                if !path.exists() || file_digest(&path)? != *digest {
                    changed.push(file.clone());
                }
            }
        }
        Ok(changed)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).at(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path(MANIFEST)
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.manifest_path();
        if path.exists() {
            RunManifest::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Which stages ran and which were reused.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub manifest: RunManifest,
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Runs `stages` in order. `input` is the raw JSONL corpus, required when
/// `Preprocess` is among them. With `resume`, a stage whose fingerprint and
/// outputs match the manifest is skipped.
pub fn run_stages(
    workspace: &Workspace,
    input: Option<&Path>,
    config: &RunConfig,
    stages: &[Stage],
    resume: bool,
) -> Result<StageRun> {
    config.validate()?;
    std::fs::create_dir_all(workspace.root()).at(workspace.root())?;
    let mut manifest = workspace.load_manifest()?.unwrap_or_default();
    manifest.tool_version = env!("CARGO_PKG_VERSION").to_owned();
    manifest.config = config.to_pairs();

    let mut external = BTreeMap::new();
    if let Some(input) = input {
        let input = std::path::absolute(input).at(input)?;
        external.insert(input.display().to_string(), file_digest(&input)?);
        manifest.input = Some(input);
    }
    if let Some(stopwords) = &config.stopwords {
        external.insert(stopwords.display().to_string(), file_digest(stopwords)?);
    }
    manifest.input_digests = external.clone();

    let pairs = config.to_pairs();
    let mut executed = Vec::new();
    let mut skipped = Vec::new();
    for &stage in stages {
        let mut inputs = BTreeMap::new();
        if stage == Stage::Preprocess {
            if manifest.input.is_none() {
                return Err(Error::InvalidConfig(
                    "preprocess needs an input corpus".into(),
                ));
            }
            inputs.extend(external.clone());
        }
        for file in stage.inputs() {
            let path = workspace.path(file);
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "{} is missing; run the earlier stages first",
                    path.display()
                ))
                .in_stage(stage.name()));
            }
            inputs.insert((*file).to_owned(), file_digest(&path)?);
        }
        let fingerprint = fingerprint(stage, &pairs, &inputs);

        if resume && is_current(workspace, manifest.stage(stage), &fingerprint)? {
            skipped.push(stage);
            continue;
        }

        let start = Instant::now();
        execute(stage, workspace, manifest.input.as_deref(), config)
            .map_err(|e| e.in_stage(stage.name()))?;
        let seconds = start.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for file in stage.outputs() {
            outputs.insert((*file).to_owned(), file_digest(&workspace.path(file))?);
        }
        manifest.put(StageRecord {
            name: stage.name().to_owned(),
            fingerprint,
            inputs,
            outputs,
            seconds,
        });
        save_json(&workspace.manifest_path(), &manifest)?;
        executed.push(stage);
    }
    save_json(&workspace.manifest_path(), &manifest)?;
    Ok(StageRun {
        manifest,
        executed,
        skipped,
    })
}

fn fingerprint(
    stage: Stage,
    pairs: &BTreeMap<String, String>,
    inputs: &BTreeMap<String, String>,
) -> String {
    let mut text = format!("{}\n{}\n", env!("CARGO_PKG_VERSION"), stage.name());
    for key in stage.keys() {
        let _ = writeln!(text, "{key}={}", pairs.get(key).map_or("", String::as_str));
    }
    for (file, digest) in inputs {
        let _ = writeln!(text, "{file}:{digest}");
    }
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn is_current(
    workspace: &Workspace,
    record: Option<&StageRecord>,
    fingerprint: &str,
) -> Result<bool> {
    let Some(record) = record else {
        return Ok(false);
    };
    if record.fingerprint != fingerprint {
        return Ok(false);
    }
    for (file, digest) in &record.outputs {
        let path = workspace.path(file);
        if !path.exists() || file_digest(&path)? != *digest {
            return Ok(false);
        }
    }
    Ok(true)
}

fn execute(stage: Stage, ws: &Workspace, input: Option<&Path>, config: &RunConfig) -> Result<()> {
    let p = |file: &str| ws.path(file);
    match stage {
        Stage::Preprocess => {
            let pipeline = config.pipeline()?;
            let input = input.expect("checked by run_stages");
            let raw = read_raw_corpus(input)?;
            if raw.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let filtered = filter_documents(&raw, &pipeline);
            let vocab = build_vocabulary(&filtered, &pipeline)?;
            // Documents without a single vocabulary term would be zero
            // columns of X.
            let (corpus, _dropped) = filtered.retain_in_vocabulary(&vocab);
            save_tokenized_corpus(&p(CORPUS), &corpus)?;
            save_vocabulary(&p(VOCAB), &vocab)
        }
        Stage::Matrices => {
            let semantic = config.semantic()?;
            let corpus = load_tokenized_corpus(&p(CORPUS))?;
            let vocab = load_vocabulary(&p(VOCAB), &corpus)?;
            let x = build_tfidf(&corpus, &vocab)?;
            let cooc = build_cooccurrence(&corpus, &vocab, &semantic)?;
            let m = sppmi(&cooc, semantic.shift)?;
            save_sparse(&p("X.mtx"), &x)?;
            save_sparse(&p("cooc.mtx"), &cooc)?;
            save_sparse(&p("M.mtx"), &m)
        }
        Stage::FactorizeX => {
            let split = config.split()?;
            let f = factorize_x(&load_sparse(&p("X.mtx"))?, &split.selection_x)?;
            save_dense(&p("W1.mtx"), f.w.view())?;
            save_dense(&p("H1.mtx"), f.h.view())?;
            save_json(&p("selection_x.json"), &f.report)
        }
        Stage::FactorizeM => {
            let split = config.split()?;
            let f = factorize_m(&load_sparse(&p("M.mtx"))?, &split.selection_m)?;
            save_dense(&p("W2.mtx"), f.w.view())?;
            save_dense(&p("H2.mtx"), f.h.view())?;
            save_json(&p("selection_m.json"), &f.report)
        }
        Stage::Joint => {
            let split = config.split()?;
            let w1 = load_dense(&p("W1.mtx"))?;
            let w2 = load_dense(&p("W2.mtx"))?;
            let wcat = concat_normalized(w1.view(), w2.view())?;
            let selection = split.joint_selection(w1.ncols(), w2.ncols(), wcat.nrows());
            let f = joint_factorize(wcat.view(), &selection)?;
            save_dense(&p("W.mtx"), f.w.view())?;
            save_dense(&p("Hstar.mtx"), f.h.view())?;
            save_json(&p("selection_joint.json"), &f.report)
        }
        Stage::Regression => {
            let x = load_sparse(&p("X.mtx"))?;
            let w = load_dense(&p("W.mtx"))?;
            let h = final_regression(&x, w.view(), &config.regression())?;
            save_dense(&p("H.mtx"), h.view())
        }
        Stage::Topics => {
            let corpus = load_tokenized_corpus(&p(CORPUS))?;
            let vocab = load_vocabulary(&p(VOCAB), &corpus)?;
            let w = load_dense(&p("W.mtx"))?;
            let h = load_dense(&p("H.mtx"))?;
            if h.ncols() != corpus.len() {
                return Err(Error::ShapeMismatch(format!(
                    "H has {} columns for {} documents",
                    h.ncols(),
                    corpus.len()
                )));
            }
            save_json(&p(TOPICS), &top_words(w.view(), &vocab, config.top_n)?)?;
            let assignments = assign_documents(h.view());
            let ids: Vec<&str> = corpus.ids().collect();
            write_assignments(
                &p(ASSIGNMENTS),
                &ids,
                &assignments.topics,
                &assignments.max_weight,
            )?;
            write_histogram(&p(HISTOGRAM), &assignments.histogram)
        }
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

fn write_assignments(path: &Path, ids: &[&str], topics: &[usize], weights: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(csv_error(path))?;
    out.write_record(["doc_id", "topic_id", "max_weight"])
        .map_err(csv_error(path))?;
    for ((id, topic), weight) in ids.iter().zip(topics).zip(weights) {
        out.write_record([id.to_string(), topic.to_string(), format!("{weight:.16e}")])
            .map_err(csv_error(path))?;
    }
    out.flush().at(path)
}

fn write_histogram(path: &Path, histogram: &[usize]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(csv_error(path))?;
    out.write_record(["topic_id", "count"])
        .map_err(csv_error(path))?;
    for (topic, count) in histogram.iter().enumerate() {
        out.write_record([topic.to_string(), count.to_string()])
            .map_err(csv_error(path))?;
    }
    out.flush().at(path)
}

/// One row of `assignments.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AssignmentRow {
    pub doc_id: String,
    pub topic_id: usize,
    pub max_weight: f64,
}

pub fn read_assignments(path: &Path) -> Result<Vec<AssignmentRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(n, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: n + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_report(path: &Path) -> Result<SelectionReport> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reassembles the model of a finished run from its artifacts. The
/// consensus bases inside the reports are not persisted and come back empty.
pub fn load_model(workspace: &Workspace) -> Result<TopicModel> {
    let p = |file: &str| workspace.path(file);
    let corpus = load_tokenized_corpus(&p(CORPUS))?;
    let w = load_dense(&p("W.mtx"))?;
    let h = load_dense(&p("H.mtx"))?;
    let reports = SplitReports {
        x: read_report(&p("selection_x.json"))?,
        m: read_report(&p("selection_m.json"))?,
        joint: read_report(&p("selection_joint.json"))?,
    };
    Ok(TopicModel {
        k1: load_dense(&p("W1.mtx"))?.ncols(),
        k2: load_dense(&p("W2.mtx"))?.ncols(),
        k: w.ncols(),
        assignments: assign_documents(h.view()),
        topics: read_topics(&p(TOPICS))?,
        document_ids: corpus.ids().map(str::to_owned).collect(),
        w,
        h,
        reports,
    })
}

/// Full pipeline from a raw JSONL corpus into `workspace`.
pub fn run_split(
    corpus_path: &Path,
    workspace: &Workspace,
    config: &RunConfig,
) -> Result<TopicModel> {
    run_stages(workspace, Some(corpus_path), config, &Stage::ALL, false)?;
    load_model(workspace)
}

/// Number of words per topic in the printed table.
pub const REPORT_WORDS: usize = 5;

/// Renders the topic table and rewrites `histogram.csv` from
/// `assignments.csv`.
pub fn report(workspace: &Workspace) -> Result<String> {
    let topics = read_topics(&workspace.path(TOPICS))?;
    let rows = read_assignments(&workspace.path(ASSIGNMENTS))?;
    let mut histogram = vec![0usize; topics.len()];
    for row in &rows {
        let slot = histogram.get_mut(row.topic_id).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "document {:?} is assigned to topic {} of {}",
                row.doc_id,
                row.topic_id,
                topics.len()
            ))
        })?;
        *slot += 1;
    }
    write_histogram(&workspace.path(HISTOGRAM), &histogram)?;

    let mut table = String::from("topic\tdocuments\ttop words\n");
    for (topic, count) in topics.iter().zip(&histogram) {
        let words: Vec<&str> = topic
            .terms
            .iter()
            .take(REPORT_WORDS)
            .map(|t| t.term.as_str())
            .collect();
        let _ = writeln!(table, "{}\t{}\t{}", topic.topic_id, count, words.join(" "));
    }
    Ok(table)
}
