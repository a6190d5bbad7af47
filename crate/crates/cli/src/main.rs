//! `rv-hate` command-line entry point.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rvhate::clustering::Metric;
use rvhate::config::RunConfig;
use rvhate::ingestion::{featurize, Dataset, FeaturizerConfig, NgramRange};
use rvhate::pipeline::{self, PreparedData, Stage, StageError};
use rvhate::tagging::{augment_train_set, Gazetteer};
use rvhate::trainer::ModuleId;
use rvhate::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "rv-hate", version, about = "Dataset-adaptive hate-speech detection with a tuned soft-voting ensemble")]
struct Cli {
    /// Worker threads (capped by RV_HATE_THREADS when set).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hash a JSONL dataset into an RVHE embedding file.
    Featurize(FeaturizeArgs),
    /// Write the dataset plus target-tagged copies of hate training rows.
    Tag(TagArgs),
    /// Train the configured modules for every seed.
    Train(RunArgs),
    /// Tune vote weights on the validation split.
    Vote(RunArgs),
    /// Score heads and the tuned vote on the test split.
    Eval(RunArgs),
    /// Produce the ablation table.
    Ablate(RunArgs),
    /// Train, vote and evaluate in one go.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Also produce the ablation table.
        #[arg(long)]
        ablate: bool,
    },
}

#[derive(Args, Debug, Default)]
struct FeaturizerArgs {
    /// Hashed feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Word n-gram range such as `1-2`, or `none`.
    #[arg(long)]
    word_ngrams: Option<String>,
    /// Character n-gram range such as `3-5`, or `none`.
    #[arg(long)]
    char_ngrams: Option<String>,
    #[arg(long)]
    hash_seed: Option<u64>,
}

fn parse_range(s: &str) -> Result<Option<NgramRange>, Error> {
    if s == "none" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e: String| Error::InvalidConfig(format!("n-gram range {s:?}: {e}")))
}

impl FeaturizerArgs {
    fn apply(&self, cfg: &mut FeaturizerConfig) -> Result<(), Error> {
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        if let Some(r) = &self.word_ngrams {
            cfg.word_ngrams = parse_range(r)?;
        }
        if let Some(r) = &self.char_ngrams {
            cfg.char_ngrams = parse_range(r)?;
        }
        if let Some(s) = self.hash_seed {
            cfg.hash_seed = s;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON run config whose `featurizer` section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    featurizer: FeaturizerArgs,
}

#[derive(Args, Debug)]
struct TagArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Gazetteer TSV (`term<TAB>ORG|NORP|GPE`); built-in lexicon otherwise.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset name used in reports.
    #[arg(long)]
    name: Option<String>,
    /// RVHE embeddings aligned with the dataset.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// RVHE embeddings aligned with the tagged dataset (see `tag`).
    #[arg(long)]
    augmented_embeddings: Option<PathBuf>,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    featurizer: FeaturizerArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Contrastive weight in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Clusters per class.
    #[arg(long)]
    k: Option<usize>,
    /// `cosine` or `l2`.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    hard_k: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// Comma-separated subset of M0,M1,M2,M3.
    #[arg(long, value_delimiter = ',')]
    modules: Option<Vec<ModuleId>>,
    /// Sampled weight vectors for the vote search.
    #[arg(long)]
    rl_steps: Option<usize>,
    #[arg(long)]
    episodes_per_update: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(c.dataset, self.data.clone().map(Some));
        set!(c.dataset_name, self.name.clone().map(Some));
        set!(c.embeddings, self.embeddings.clone().map(Some));
        set!(c.augmented_embeddings, self.augmented_embeddings.clone().map(Some));
        set!(c.gazetteer, self.gazetteer.clone().map(Some));
        set!(c.output_dir, self.out.clone().map(Some));
        self.featurizer.apply(&mut c.featurizer)?;
        set!(c.train.epochs, self.epochs);
        set!(c.train.batch_size, self.batch_size);
        set!(c.train.learning_rate, self.lr);
        set!(c.train.temperature, self.tau);
        set!(c.train.lambda, self.lambda);
        set!(c.train.k_per_class, self.k);
        set!(c.train.metric, self.metric);
        set!(c.train.hidden, self.hidden);
        set!(c.train.hard_k, self.hard_k);
        set!(c.train.rho, self.rho);
        set!(c.train.queue_capacity, self.queue_capacity);
        set!(c.modules, self.modules);
        set!(c.rl_steps, self.rl_steps);
        set!(c.episodes_per_update, self.episodes_per_update);
        set!(c.seeds, self.seeds);
        Ok(c)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Training => 3,
        ErrorKind::Internal => 4,
    }
}

fn cmd_featurize(a: &FeaturizeArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.featurizer,
        None => FeaturizerConfig::default(),
    };
    a.featurizer.apply(&mut cfg)?;
    cfg.validate()?;
    let dataset = Dataset::load(&a.data)?;
    let emb = featurize(&dataset, &cfg)?;
    emb.write(&a.out)?;
    println!(
        "wrote {} rows x {} dims to {} ({} zero rows)",
        emb.count(),
        emb.dim(),
        a.out.display(),
        emb.warning_count()
    );
    Ok(())
}

fn cmd_tag(a: &TagArgs) -> Result<(), Error> {
    let gaz = match &a.gazetteer {
        Some(p) => Gazetteer::load(p)?,
        None => Gazetteer::builtin(),
    };
    let dataset = Dataset::load(&a.data)?;
    let (augmented, stats) = augment_train_set(&dataset, &gaz)?;
    let mut buf = Vec::new();
    augmented
        .write_jsonl(&mut buf)
        .map_err(|e| Error::Invariant(format!("serializing dataset: {e}")))?;
    fs::write(&a.out, buf).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    println!(
        "tagged {} of {} hate training rows ({:.1}% coverage); wrote {} rows to {}",
        stats.tagged,
        stats.hate_train,
        100.0 * stats.coverage(),
        augmented.len(),
        a.out.display()
    );
    Ok(())
}

fn prepare(run: &RunArgs, ablate: bool) -> Result<(RunConfig, PreparedData), StageError> {
    let at = |stage| move |source| StageError { stage, source };
    let mut cfg = run.resolve().map_err(at(Stage::Config))?;
    cfg.ablate |= ablate;
    cfg.validate().map_err(at(Stage::Config))?;
    pipeline::write_manifest(&cfg).map_err(at(Stage::Config))?;
    let data = PreparedData::load(&cfg).map_err(at(Stage::Ingest))?;
    Ok((cfg, data))
}

fn run_stage(cmd: &Command) -> Result<(), StageError> {
    let at = |stage| move |source| StageError { stage, source };
    match cmd {
        Command::Train(run) => {
            let (cfg, data) = prepare(run, false)?;
            let outcomes = pipeline::stage_train(&cfg, &data).map_err(at(Stage::Train))?;
            for (seed, m, o) in outcomes {
                println!(
                    "seed {seed} {m}: best epoch {} valid macro-F1 {:.4}",
                    o.report.best_epoch, o.report.best_valid_macro_f1
                );
            }
        }
        Command::Vote(run) => {
            let (cfg, data) = prepare(run, false)?;
            for w in pipeline::stage_vote(&cfg, &data).map_err(at(Stage::Vote))? {
                println!(
                    "seed {}: weights {:?} valid macro-F1 {:.4}",
                    w.seed,
                    w.weights.as_slice(),
                    w.valid_macro_f1
                );
            }
        }
        Command::Eval(run) => {
            let (cfg, data) = prepare(run, false)?;
            let report = pipeline::stage_eval(&cfg, &data).map_err(at(Stage::Eval))?;
            report.write_text(std::io::stdout()).map_err(at(Stage::Eval))?;
        }
        Command::Ablate(run) => {
            let (cfg, data) = prepare(run, true)?;
            let report = pipeline::stage_ablate(&cfg, &data, false).map_err(at(Stage::Ablate))?;
            report.write_text(std::io::stdout()).map_err(at(Stage::Ablate))?;
        }
        Command::Pipeline { run, ablate } => {
            let mut cfg = run.resolve().map_err(at(Stage::Config))?;
            cfg.ablate |= *ablate;
            let summary = pipeline::run_pipeline(&cfg)?;
            summary.eval.write_text(std::io::stdout()).map_err(at(Stage::Eval))?;
            if let Some(a) = summary.ablation {
                println!();
                a.write_text(std::io::stdout()).map_err(at(Stage::Ablate))?;
            }
        }
        Command::Featurize(_) | Command::Tag(_) => unreachable!("handled without stages"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), (Option<Stage>, Error)> {
    match &cli.command {
        Command::Featurize(a) => cmd_featurize(a).map_err(|e| (None, e)),
        Command::Tag(a) => cmd_tag(a).map_err(|e| (None, e)),
        cmd => pipeline::with_thread_pool(cli.jobs, || run_stage(cmd))
            .map_err(|e| (Some(Stage::Config), e))?
            .map_err(|e| (Some(e.stage), e.source)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, e)) => {
            match stage {
                Some(s) => eprintln!("rv-hate: {s} stage failed: {e}"),
                None => eprintln!("rv-hate: {e}"),
            }
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
