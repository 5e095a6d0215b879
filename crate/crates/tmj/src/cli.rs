//! `tmj` command line.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tmj_core::forest::{ClassWeight, FeaturesPerSplit};
use tmj_core::preprocess::fit_encoders;
use tmj_core::schema::FeatureSubset;
use tmj_core::synth::generate_with_schema;
use tmj_core::{Cohort, StrategyTag};

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::manifest::RunManifest;
use crate::model::{PredictRequest, TrainedModel};
use crate::{io, plot, service};

#[derive(Debug, Parser)]
#[command(name = "tmj", version, about = "TMJ involvement classifier with conformal sets and SHAP explanations")]
pub struct Cli {
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON config file (or a run manifest).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort CSV.
    Generate(GenerateArgs),
    /// Fit a model and write it with its test report and SHAP summary.
    Train(TrainArgs),
    /// Score a model on the test partition of a cohort.
    Evaluate(EvaluateArgs),
    /// Prediction, conformal set and attributions for one exam.
    Explain(ExplainArgs),
    /// Write the encoded rows of one strategy as CSV.
    Export(ExportArgs),
    /// Train every configured strategy on one split and tabulate the results.
    Compare(CompareArgs),
    /// Render a SHAP summary chart from exported points.
    PlotSummary(PlotArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Iid,
    Temporal,
    Lagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    Expert,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Calib,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// default, high-signal or no-signal
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub patients: Option<usize>,
    /// Output CSV; `<out-dir>/cohort.csv` when unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct StrategyArgs {
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    /// Temporal segment index.
    #[arg(long)]
    pub segment: Option<usize>,
    /// Previous exams per lagged row.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub features: Option<SubsetArg>,
    /// Temporal segment boundaries in years, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub segment_boundaries: Option<Vec<f64>>,
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    /// sqrt, log2, all or a number
    #[arg(long)]
    pub features_per_split: Option<String>,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long)]
    pub balanced: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    #[arg(long)]
    pub k_reg: Option<usize>,
    #[arg(long)]
    pub randomized: bool,
    #[arg(long)]
    pub allow_empty_sets: bool,
    /// Test rows to explain for the summary.
    #[arg(long)]
    pub shap_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub shap_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Request JSON as accepted by `POST /predict`.
    #[arg(long, conflicts_with_all = ["cohort", "row"])]
    pub request: Option<PathBuf>,
    #[arg(long, requires = "row")]
    pub cohort: Option<PathBuf>,
    /// `PATIENT_ID:EXAM_INDEX`
    #[arg(long, requires = "cohort")]
    pub row: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub partition: PartitionArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_enum)]
    pub features: Option<SubsetArg>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Long-form points CSV written by `train`.
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// Recompute the threshold for this α from the stored calibration scores.
    #[arg(long)]
    pub alpha_override: Option<f64>,
}

impl From<SubsetArg> for FeatureSubset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Expert => FeatureSubset::Expert,
            SubsetArg::All => FeatureSubset::All,
        }
    }
}

fn parse_features_per_split(s: &str) -> Result<FeaturesPerSplit> {
    match s {
        "sqrt" => Ok(FeaturesPerSplit::Sqrt),
        "log2" => Ok(FeaturesPerSplit::Log2),
        "all" => Ok(FeaturesPerSplit::All),
        n => n
            .parse()
            .ok()
            .filter(|&k: &usize| k > 0)
            .map(FeaturesPerSplit::Fixed)
            .ok_or_else(|| Error::validation(format!("--features-per-split: expected sqrt, log2, all or a positive count, got `{n}`"))),
    }
}

impl StrategyArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let kind = self.strategy.or(match cfg.strategy {
            _ if self.segment.is_none() && self.k.is_none() => None,
            StrategyTag::Iid => Some(StrategyKind::Iid),
            StrategyTag::Temporal { .. } => Some(StrategyKind::Temporal),
            StrategyTag::Lagged { .. } => Some(StrategyKind::Lagged),
        });
        if let Some(kind) = kind {
            cfg.strategy = match kind {
                StrategyKind::Iid => StrategyTag::Iid,
                StrategyKind::Temporal => StrategyTag::Temporal {
                    segment: self.segment.unwrap_or(match cfg.strategy {
                        StrategyTag::Temporal { segment } => segment,
                        _ => 0,
                    }),
                },
                StrategyKind::Lagged => StrategyTag::Lagged {
                    k: self.k.unwrap_or(match cfg.strategy {
                        StrategyTag::Lagged { k } => k,
                        _ => 1,
                    }),
                },
            };
        }
        match cfg.strategy {
            StrategyTag::Iid if self.segment.is_some() || self.k.is_some() => {
                return Err(Error::validation("--segment and --k do not apply to the iid strategy"));
            }
            StrategyTag::Temporal { .. } if self.k.is_some() => {
                return Err(Error::validation("--k applies to the lagged strategy only"));
            }
            StrategyTag::Lagged { .. } if self.segment.is_some() => {
                return Err(Error::validation("--segment applies to the temporal strategy only"));
            }
            _ => {}
        }
        if let Some(f) = self.features {
            cfg.features = f.into();
        }
        if let Some(b) = &self.segment_boundaries {
            cfg.segment_boundaries = b.clone();
        }
        Ok(())
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let f = &mut cfg.forest;
        if let Some(n) = self.n_trees {
            f.n_trees = n;
        }
        if let Some(d) = self.max_depth {
            f.max_depth = Some(d);
        }
        if let Some(n) = self.min_samples_leaf {
            f.min_samples_leaf = n;
        }
        if let Some(n) = self.min_samples_split {
            f.min_samples_split = n;
        }
        if let Some(s) = &self.features_per_split {
            f.features_per_split = parse_features_per_split(s)?;
        }
        if self.no_bootstrap {
            f.bootstrap = false;
        }
        if self.balanced {
            f.class_weight = ClassWeight::Balanced;
        }
        let c = &mut cfg.conformal;
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(l) = self.lambda_reg {
            c.lambda_reg = l;
        }
        if let Some(k) = self.k_reg {
            c.k_reg = k;
        }
        if self.randomized {
            c.randomized = true;
        }
        if self.allow_empty_sets {
            c.allow_empty_sets = true;
        }
        if let Some(n) = self.shap_rows {
            cfg.shap_rows = Some(n);
        }
        Ok(())
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> u8 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => crate::error::exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::validation("--threads must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(|| dispatch(&cli)),
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut cfg = ConfigFile::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.experiment.set_seed(seed);
    }
    match &cli.command {
        Command::Generate(a) => generate(cli, cfg, a),
        Command::Train(a) => train(cli, cfg, a),
        Command::Evaluate(a) => evaluate(cli, cfg, a),
        Command::Explain(a) => explain(cli, cfg, a),
        Command::Export(a) => export(cli, cfg, a),
        Command::Compare(a) => compare(cli, cfg, a),
        Command::PlotSummary(a) => plot_summary(cli, a),
        Command::Serve(a) => serve(a),
    }
}

fn params(cfg: &ConfigFile) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn load_cohort(cfg: &ConfigFile, path: &Path, manifest: &mut RunManifest) -> Result<Cohort> {
    let schema = cfg.input.schema()?;
    let cohort = io::load_cohort(path, &schema, !cfg.input.lenient)?;
    manifest.input(path)?;
    for p in [&cfg.input.schema, &cfg.input.drug_map].into_iter().flatten() {
        manifest.input(p)?;
    }
    Ok(cohort)
}

fn experiment_seeds(m: RunManifest, e: &ExperimentConfig) -> RunManifest {
    m.seed("split", e.split_seed)
        .seed("forest", e.forest.seed)
        .seed("conformal", e.conformal.seed)
        .seed("preprocess", e.preprocess.seed)
}

fn generate(cli: &Cli, mut cfg: ConfigFile, a: &GenerateArgs) -> Result<()> {
    if a.preset.is_some() {
        cfg.preset = a.preset.clone();
    }
    let mut synth = cfg.synthesis()?;
    if let Some(n) = a.patients {
        synth.n_patients = n;
    }
    if let Some(seed) = cli.seed {
        synth.rng_seed = seed;
    }
    cfg.synthesis = serde_json::to_value(&synth).expect("config serializes");
    let schema = cfg.input.schema()?;
    let cohort = generate_with_schema(&synth, schema)?;
    let path = a.out.clone().unwrap_or_else(|| cli.out_dir.join("cohort.csv"));
    io::save_cohort(&path, &cohort)?;

    let mut m = RunManifest::new("generate", cli.config.as_deref(), params(&cfg)).seed("synthesis", synth.rng_seed);
    if let Some(p) = &cfg.input.schema {
        m.input(p)?;
    }
    m.output(&path)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    m.write(dir)?;
    let s = tmj_core::cohort::cohort_summary(&cohort);
    println!("{} patients, {} exams, TMJ1 prevalence {:.3} -> {}", s.patients, s.records, s.prevalence, path.display());
    Ok(())
}

fn train(cli: &Cli, mut cfg: ConfigFile, a: &TrainArgs) -> Result<()> {
    a.strategy.apply(&mut cfg.experiment)?;
    a.model.apply(&mut cfg.experiment)?;
    let mut m = RunManifest::new("train", cli.config.as_deref(), serde_json::Value::Null);
    let cohort = load_cohort(&cfg, &a.cohort, &mut m)?;
    let drugs = cfg.input.drug_map()?;
    let run = experiment::run_experiment(&cohort, &cfg.experiment, &drugs)?;

    let dir = &cli.out_dir;
    let outputs = [
        (dir.join("model.json"), run.model.to_bytes()),
        (dir.join("report.json"), run.report.to_json()),
        (dir.join("report.txt"), experiment::render_table(std::slice::from_ref(&run.report)).into_bytes()),
        (dir.join("summary_ranking.csv"), io::ranking_to_csv(&run.summary.ranking)),
        (dir.join("summary_points.csv"), io::points_to_csv(&run.summary.points)),
    ];
    for (path, bytes) in &outputs {
        io::write_file(path, bytes)?;
        m.output(path)?;
    }
    m.parameters = params(&cfg);
    let m = experiment_seeds(m, &cfg.experiment);
    m.write(dir)?;
    print!("{}", experiment::render_table(std::slice::from_ref(&run.report)));
    println!("macro-F1 {:.4}, model -> {}", run.report.macro_f1, outputs[0].0.display());
    Ok(())
}

fn evaluate(cli: &Cli, cfg: ConfigFile, a: &EvaluateArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let mut m = RunManifest::new("evaluate", cli.config.as_deref(), params(&cfg));
    m.input(&a.model)?;
    let cohort = load_cohort(&cfg, &a.cohort, &mut m)?;
    let shap_rows = a.shap_rows.or(cfg.experiment.shap_rows);
    let (report, summary) = experiment::evaluate_model(&model, &cohort, shap_rows)?;

    let dir = &cli.out_dir;
    let outputs = [
        (dir.join("evaluation.json"), report.to_json()),
        (dir.join("evaluation_ranking.csv"), io::ranking_to_csv(&summary.ranking)),
        (dir.join("evaluation_points.csv"), io::points_to_csv(&summary.points)),
    ];
    for (path, bytes) in &outputs {
        io::write_file(path, bytes)?;
        m.output(path)?;
    }
    m.seed("split", model.split.seed).write(dir)?;
    print!("{}", experiment::render_table(std::slice::from_ref(&report)));
    Ok(())
}

fn parse_row(spec: &str) -> Result<(&str, usize)> {
    let (pid, idx) = spec
        .rsplit_once(':')
        .ok_or_else(|| Error::validation(format!("--row: expected PATIENT_ID:EXAM_INDEX, got `{spec}`")))?;
    let idx = idx.parse().map_err(|_| Error::validation(format!("--row: bad exam index `{idx}`")))?;
    Ok((pid, idx))
}

fn explain(cli: &Cli, cfg: ConfigFile, a: &ExplainArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let mut m = RunManifest::new("explain", cli.config.as_deref(), params(&cfg));
    m.input(&a.model)?;
    let request: PredictRequest = match (&a.request, &a.cohort, &a.row) {
        (Some(path), _, _) => {
            m.input(path)?;
            io::read_json(path)?
        }
        (None, Some(path), Some(row)) => {
            let cohort = load_cohort(&cfg, path, &mut m)?;
            let (pid, idx) = parse_row(row)?;
            let patient = cohort.patient(pid).ok_or_else(|| Error::validation(format!("no patient `{pid}` in the cohort")))?;
            model.request_for_exam(patient, idx)?
        }
        _ => return Err(Error::validation("explain needs --request or --cohort with --row")),
    };
    let response = model.predict(&request)?;
    let path = cli.out_dir.join("explanation.json");
    io::write_json(&path, &response)?;
    m.output(&path)?;
    m.write(&cli.out_dir)?;
    std::io::Write::write_all(&mut std::io::stdout(), &io::to_json_pretty(&response)).map_err(|e| Error::io("stdout", e))
}

fn export(cli: &Cli, mut cfg: ConfigFile, a: &ExportArgs) -> Result<()> {
    a.strategy.apply(&mut cfg.experiment)?;
    let e = &cfg.experiment;
    let mut m = RunManifest::new("export", cli.config.as_deref(), serde_json::Value::Null);
    let cohort = load_cohort(&cfg, &a.cohort, &mut m)?;
    let drugs = cfg.input.drug_map()?;
    let rows = experiment::strategy_rows(&cohort, e.strategy, e.features, &e.segment_boundaries)?;
    let split = experiment::split_cohort(&cohort, e.split_fractions, e.split_seed)?;
    let parts = experiment::partition(&rows, &split)?;
    // encoders are always fitted on the training partition
    let encoder = fit_encoders(&parts[0], &drugs, &e.preprocess)?;
    let selected = match a.partition {
        PartitionArg::Train => &parts[0],
        PartitionArg::Calib => &parts[1],
        PartitionArg::Test => &parts[2],
        PartitionArg::All => &rows,
    };
    let set = encoder.transform(selected)?;
    let name = format!("samples_{}.csv", format!("{:?}", a.partition).to_lowercase());
    let path = cli.out_dir.join(name);
    io::write_file(&path, &io::sample_set_to_csv(&set))?;
    m.output(&path)?;
    m.parameters = params(&cfg);
    experiment_seeds(m, &cfg.experiment).write(&cli.out_dir)?;
    println!("{} rows x {} columns -> {}", set.len(), set.d(), path.display());
    Ok(())
}

fn compare(cli: &Cli, mut cfg: ConfigFile, a: &CompareArgs) -> Result<()> {
    if let Some(f) = a.features {
        cfg.experiment.features = f.into();
    }
    a.model.apply(&mut cfg.experiment)?;
    let mut m = RunManifest::new("compare", cli.config.as_deref(), serde_json::Value::Null);
    let cohort = load_cohort(&cfg, &a.cohort, &mut m)?;
    let drugs = cfg.input.drug_map()?;
    let configs: Vec<ExperimentConfig> =
        cfg.compare.iter().map(|&strategy| ExperimentConfig { strategy, ..cfg.experiment.clone() }).collect();
    let cmp = experiment::compare_strategies(&cohort, &configs, &drugs)?;
    let table = experiment::render_table(&cmp.reports);

    let dir = &cli.out_dir;
    let json = dir.join("comparison.json");
    let txt = dir.join("comparison.txt");
    io::write_json(&json, &cmp)?;
    io::write_file(&txt, table.as_bytes())?;
    m.output(&json)?;
    m.output(&txt)?;
    m.parameters = params(&cfg);
    experiment_seeds(m, &cfg.experiment).write(dir)?;
    print!("{table}");
    Ok(())
}

fn plot_summary(cli: &Cli, a: &PlotArgs) -> Result<()> {
    let points = io::read_points(&a.summary)?;
    let svg = plot::summary_svg(&points, a.top)?;
    io::write_file(&a.out, svg.as_bytes())?;
    let mut m = RunManifest::new("plot-summary", cli.config.as_deref(), serde_json::Value::Null);
    m.input(&a.summary)?;
    m.output(&a.out)?;
    m.write(&cli.out_dir)?;
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let state = service::AppState::load(a.model.clone(), a.alpha_override)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Internal(format!("runtime: {e}")))?;
    runtime.block_on(service::serve(state, SocketAddr::new(a.bind, a.port)))
}
