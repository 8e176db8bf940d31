use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use senmfk::config::RunConfig;
use senmfk::workspace::{load_model, report, run_stages, RunManifest, Stage, Workspace};
use senmfk::{Error, Result};

/// Semantic NMF topic modeling with separate term-document and word-context
/// factorizations.
#[derive(Debug, Parser)]
#[command(name = "senmfk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize, filter and build the vocabulary.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        settings: Settings,
    },
    /// Build X (TF-IDF), the co-occurrence counts and M (SPPMI) from a
    /// preprocessed workspace.
    Matrices {
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        shift: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole pipeline.
    Run {
        /// Raw JSONL corpus; defaults to the one recorded in --manifest.
        #[arg(long, required_unless_present = "manifest")]
        input: Option<PathBuf>,
        /// Flat `key = value` settings file; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repeat the run recorded in a manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StageMode::All)]
        stage: StageMode,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        settings: Settings,
    },
    /// Print the topic table and rewrite histogram.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageMode {
    /// Run every stage.
    All,
    /// Skip stages whose inputs, settings and outputs are unchanged.
    Resume,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, env = "SENMFK_WORKSPACE", default_value = "workspace")]
    workspace: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Default, Args)]
struct Settings {
    #[arg(long)]
    min_doc_tokens: Option<String>,
    #[arg(long)]
    min_df: Option<String>,
    #[arg(long)]
    max_df: Option<String>,
    /// Stopword file, one word per line; `bundled` for the built-in list.
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    shift: Option<String>,
    /// Lower rank bound of all three scans.
    #[arg(long)]
    k_min: Option<String>,
    /// Upper rank bound of all three scans.
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    kx_min: Option<String>,
    #[arg(long)]
    kx_max: Option<String>,
    #[arg(long)]
    km_min: Option<String>,
    #[arg(long)]
    km_max: Option<String>,
    /// `auto` for min(k1, k2).
    #[arg(long)]
    kj_min: Option<String>,
    /// `auto` for k1 + k2.
    #[arg(long)]
    kj_max: Option<String>,
    #[arg(long)]
    perturbations: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    sil_threshold: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    top_n: Option<String>,
}

impl Settings {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        let pairs = [
            ("min-doc-tokens", &self.min_doc_tokens),
            ("min-df", &self.min_df),
            ("max-df", &self.max_df),
            ("stopwords", &self.stopwords),
            ("window", &self.window),
            ("shift", &self.shift),
            // the broad bounds first so per-stage flags win
            ("k-min", &self.k_min),
            ("k-max", &self.k_max),
            ("kx-min", &self.kx_min),
            ("kx-max", &self.kx_max),
            ("km-min", &self.km_min),
            ("km-max", &self.km_max),
            ("kj-min", &self.kj_min),
            ("kj-max", &self.kj_max),
            ("perturbations", &self.perturbations),
            ("delta", &self.delta),
            ("sil-threshold", &self.sil_threshold),
            ("seed", &self.seed),
            ("max-iter", &self.max_iter),
            ("tol", &self.tol),
            ("top-n", &self.top_n),
        ];
        for (key, value) in pairs {
            if let Some(value) = value {
                config.set(key, value)?;
            }
        }
        Ok(())
    }
}

fn set_threads(config: &mut RunConfig, threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads.or(config.threads) {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        config.threads = Some(n);
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

fn warn_fallbacks(workspace: &Workspace) -> Result<()> {
    let model = load_model(workspace)?;
    let reports = [
        ("factorize_x", &model.reports.x),
        ("factorize_m", &model.reports.m),
        ("joint", &model.reports.joint),
    ];
    for (stage, r) in reports {
        if r.fallback {
            eprintln!(
                "warning: {stage}: no rank reached the silhouette threshold; kept k = {}",
                r.chosen_k
            );
        }
    }
    if !model.assignments.unassigned.is_empty() {
        eprintln!(
            "warning: {} documents have no topic weight and were put in topic 0",
            model.assignments.unassigned.len()
        );
    }
    println!(
        "k1 = {}, k2 = {}, k = {}, documents = {}",
        model.k1,
        model.k2,
        model.k,
        model.document_ids.len()
    );
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            common,
            settings,
        } => {
            let mut config = RunConfig::default();
            settings.apply(&mut config)?;
            set_threads(&mut config, common.threads)?;
            let ws = Workspace::new(common.workspace);
            run_stages(&ws, Some(&input), &config, &[Stage::Preprocess], false)?;
            Ok(())
        }
        Command::Matrices {
            window,
            shift,
            common,
        } => {
            let ws = Workspace::new(common.workspace);
            let mut config = match ws.load_manifest()? {
                Some(m) => m.run_config()?,
                None => RunConfig::default(),
            };
            if let Some(w) = window {
                config.window = w;
            }
            if let Some(s) = shift {
                config.shift = s;
            }
            set_threads(&mut config, common.threads)?;
            run_stages(&ws, None, &config, &[Stage::Matrices], false)?;
            Ok(())
        }
        Command::Run {
            input,
            config: config_file,
            manifest,
            stage,
            common,
            settings,
        } => {
            let mut config = RunConfig::default();
            let mut input = input;
            if let Some(path) = manifest {
                let recorded = RunManifest::load(&path)?;
                config = recorded.run_config()?;
                input = input.or(recorded.input);
            }
            if let Some(path) = config_file {
                config.apply_file(&path)?;
            }
            settings.apply(&mut config)?;
            set_threads(&mut config, common.threads)?;
            let input = input.ok_or_else(|| Error::InvalidConfig("no input corpus".into()))?;
            let ws = Workspace::new(common.workspace);
            let run = run_stages(
                &ws,
                Some(&input),
                &config,
                &Stage::ALL,
                stage == StageMode::Resume,
            )?;
            for s in &run.skipped {
                eprintln!("{}: up to date, skipped", s.name());
            }
            warn_fallbacks(&ws)
        }
        Command::Report { common } => {
            let ws = Workspace::new(common.workspace);
            let drift = ws
                .load_manifest()?
                .map(|m| m.drift(&ws))
                .transpose()?
                .unwrap_or_default();
            for file in drift.iter().filter(|f| f.as_str() != "histogram.csv") {
                eprintln!("warning: {file} changed since it was written");
            }
            print!("{}", report(&ws)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
