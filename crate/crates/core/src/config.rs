//! Flat `key = value` run configuration shared by config files, command-line
//! flags and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::matrices::SemanticConfig;
use crate::nmf::{mix_seed, NmfConfig};
use crate::selection::SelectionConfig;
use crate::split::SplitConfig;
use crate::text::{bundled_stopwords, parse_stopwords, PipelineConfig};

/// Every tunable of an end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub min_doc_tokens: usize,
    pub min_df: usize,
    pub max_df: f64,
    /// `None` selects the bundled English list.
    pub stopwords: Option<PathBuf>,
    pub window: usize,
    pub shift: f64,
    pub kx: (usize, usize),
    pub km: (usize, usize),
    pub kj: (Option<usize>, Option<usize>),
    pub perturbations: usize,
    pub delta: f64,
    pub sil_threshold: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub top_n: usize,
    /// Worker cap; does not influence results.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let semantic = SemanticConfig::default();
        let selection = SelectionConfig::new(1, 10);
        let nmf = NmfConfig::default();
        RunConfig {
            min_doc_tokens: pipeline.min_doc_tokens,
            min_df: pipeline.min_df,
            max_df: pipeline.max_df_ratio,
            stopwords: None,
            window: semantic.window,
            shift: semantic.shift,
            kx: (selection.k_min, selection.k_max),
            km: (selection.k_min, selection.k_max),
            kj: (None, None),
            perturbations: selection.n_perturbations,
            delta: selection.delta,
            sil_threshold: selection.silhouette_threshold,
            seed: 42,
            max_iter: nmf.max_iter,
            tol: nmf.tol,
            top_n: 20,
            threads: None,
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "min-doc-tokens",
    "min-df",
    "max-df",
    "stopwords",
    "window",
    "shift",
    "k-min",
    "k-max",
    "kx-min",
    "kx-max",
    "km-min",
    "km-max",
    "kj-min",
    "kj-max",
    "perturbations",
    "delta",
    "sil-threshold",
    "seed",
    "max-iter",
    "tol",
    "top-n",
    "threads",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value {value:?} for {key}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_owned(), |k| k.to_string())
}

impl RunConfig {
    /// Applies one setting. `k-min`/`k-max` set all three scan ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "min-doc-tokens" => self.min_doc_tokens = parse(key, value)?,
            "min-df" => self.min_df = parse(key, value)?,
            "max-df" => self.max_df = parse(key, value)?,
            "stopwords" => {
                self.stopwords = (value != "bundled").then(|| PathBuf::from(value));
            }
            "window" => self.window = parse(key, value)?,
            "shift" => self.shift = parse(key, value)?,
            "k-min" => {
                let k = parse(key, value)?;
                self.kx.0 = k;
                self.km.0 = k;
                self.kj.0 = Some(k);
            }
            "k-max" => {
                let k = parse(key, value)?;
                self.kx.1 = k;
                self.km.1 = k;
                self.kj.1 = Some(k);
            }
            "kx-min" => self.kx.0 = parse(key, value)?,
            "kx-max" => self.kx.1 = parse(key, value)?,
            "km-min" => self.km.0 = parse(key, value)?,
            "km-max" => self.km.1 = parse(key, value)?,
            "kj-min" => self.kj.0 = parse_auto(key, value)?,
            "kj-max" => self.kj.1 = parse_auto(key, value)?,
            "perturbations" => self.perturbations = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "sil-threshold" => self.sil_threshold = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max-iter" => self.max_iter = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "top-n" => self.top_n = parse(key, value)?,
            "threads" => self.threads = parse_auto(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_owned(),
                line: n + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).at(path)?;
        self.apply_text(&text, path)
    }

    /// Every setting as `key -> value`; [`RunConfig::set`] on each pair
    /// reproduces the configuration.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("min-doc-tokens", self.min_doc_tokens.to_string());
        put("min-df", self.min_df.to_string());
        put("max-df", self.max_df.to_string());
        put(
            "stopwords",
            self.stopwords
                .as_ref()
                .map_or_else(|| "bundled".to_owned(), |p| p.display().to_string()),
        );
        put("window", self.window.to_string());
        put("shift", self.shift.to_string());
        put("kx-min", self.kx.0.to_string());
        put("kx-max", self.kx.1.to_string());
        put("km-min", self.km.0.to_string());
        put("km-max", self.km.1.to_string());
        put("kj-min", auto(self.kj.0));
        put("kj-max", auto(self.kj.1));
        put("perturbations", self.perturbations.to_string());
        put("delta", self.delta.to_string());
        put("sil-threshold", self.sil_threshold.to_string());
        put("seed", self.seed.to_string());
        put("max-iter", self.max_iter.to_string());
        put("tol", self.tol.to_string());
        put("top-n", self.top_n.to_string());
        put("threads", auto(self.threads));
        m
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let stopwords = match &self.stopwords {
            None => bundled_stopwords(),
            Some(path) => parse_stopwords(&std::fs::read_to_string(path).at(path)?),
        };
        let cfg = PipelineConfig {
            min_doc_tokens: self.min_doc_tokens,
            min_df: self.min_df,
            max_df_ratio: self.max_df,
            stopwords,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn semantic(&self) -> Result<SemanticConfig> {
        let cfg = SemanticConfig {
            window: self.window,
            shift: self.shift,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// NMF settings for one pipeline stage; each stage draws from its own
    /// seed stream.
    pub fn nmf(&self, stage: u64) -> NmfConfig {
        NmfConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            seed: mix_seed(self.seed, &[stage]),
            ..NmfConfig::default()
        }
    }

    fn selection(&self, (k_min, k_max): (usize, usize), stage: u64) -> SelectionConfig {
        SelectionConfig {
            k_min,
            k_max,
            n_perturbations: self.perturbations,
            delta: self.delta,
            silhouette_threshold: self.sil_threshold,
            nmf: self.nmf(stage),
            ..SelectionConfig::new(k_min, k_max)
        }
    }

    pub fn split(&self) -> Result<SplitConfig> {
        let mut selection_m = self.selection(self.km, 2);
        selection_m.symmetric = true;
        let cfg = SplitConfig {
            selection_x: self.selection(self.kx, 1),
            selection_m,
            selection_joint: self.selection((1, 1), 3),
            joint_k_min: self.kj.0,
            joint_k_max: self.kj.1,
            top_n_words: self.top_n,
        };
        cfg.selection_x.validate()?;
        cfg.selection_m.validate()?;
        cfg.selection_joint.validate()?;
        if cfg.joint_k_min == Some(0) || cfg.joint_k_max == Some(0) {
            return Err(Error::InvalidConfig(
                "joint ranks must be at least 1".into(),
            ));
        }
        if let (Some(a), Some(b)) = (cfg.joint_k_min, cfg.joint_k_max) {
            if a > b {
                return Err(Error::InvalidConfig(format!(
                    "joint rank range [{a}, {b}] is empty"
                )));
            }
        }
        if self.top_n == 0 {
            return Err(Error::InvalidConfig("top-n must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// NMF settings of the final document regression.
    pub fn regression(&self) -> NmfConfig {
        self.nmf(4)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline()?;
        self.semantic()?;
        self.split()?;
        Ok(())
    }
}
