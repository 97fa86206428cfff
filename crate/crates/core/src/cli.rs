//! The `hml` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{EnsembleMode, FocalInput, ResampleMethod, TrainConfig, UncertaintySource};
use crate::data::arff::parse_arff;
use crate::data::synth::{spearman, synth, SynthSpec};
use crate::data::{load_dag_sidecar, native, Dataset, SplitTag, Splits};
use crate::error::{Error, Result};
use crate::imbalance::{ImbalanceWeights, NClassesMode, SchedulerKind};
use crate::metrics::MetricsReport;
use crate::nn::checkpoint::{self, config_hash, Checkpoint};
use crate::nn::train::{train, EpochRecord};
use crate::resample::{hros_pd, labelset_deviation, lpros, weights_after_resample, IrTarget, PlanMethod};
use crate::uncertainty::FocalKind;

pub const OUT_DIR_ENV: &str = "HML_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "hml", version, about = "Hierarchical multi-label training with imbalance and uncertainty weighting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an ensemble and write metrics and a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Generate a synthetic long-tailed dataset.
    Synth(SynthArgs),
    /// Build an oversampling plan for a training set.
    Resample(ResampleArgs),
    /// Print per-node imbalance weights as CSV.
    InspectWeights(InspectArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct DataArgs {
    /// Synthetic data: `default` or a spec TOML file.
    #[arg(long, value_name = "SPEC")]
    pub synth: Option<String>,
    /// Training split (`.arff` or native `.hmld`).
    #[arg(long = "train-data", value_name = "PATH")]
    pub train: Option<PathBuf>,
    #[arg(long = "valid-data", value_name = "PATH")]
    pub valid: Option<PathBuf>,
    #[arg(long = "test-data", value_name = "PATH")]
    pub test: Option<PathBuf>,
    /// Extra DAG edges, `child<TAB>parent` per line.
    #[arg(long, value_name = "PATH")]
    pub dag: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub ensemble_mode: Option<EnsembleMode>,
    #[arg(long)]
    pub trunk_frozen: Option<bool>,
    /// Node-wise imbalance weighting on or off.
    #[arg(long)]
    pub imbalance: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub w0: Option<f64>,
    #[arg(long)]
    pub n_classes_mode: Option<NClassesMode>,
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
    #[arg(long)]
    pub scheduler_k: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub focal: Option<FocalKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub u0: Option<f64>,
    #[arg(long)]
    pub focal_k: Option<f64>,
    #[arg(long)]
    pub uncertainty_source: Option<UncertaintySource>,
    #[arg(long)]
    pub focal_input: Option<FocalInput>,
    #[arg(long)]
    pub resample: Option<ResampleMethod>,
    #[arg(long)]
    pub resample_pct: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),+) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })+ };
        }
        set!(
            lr, epochs, batch_size, hidden_dim, dropout, ensemble_size, ensemble_mode, trunk_frozen, imbalance, w0,
            n_classes_mode, scheduler, scheduler_k, lambda, focal, u0, focal_k, uncertainty_source, focal_input,
            resample, resample_pct, threshold, seed
        );
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config TOML with `[train]` and `[data]` tables.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Benchmark defaults such as `cellcycle-fun`, applied beneath the config file.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, env = OUT_DIR_ENV, default_value = "hml-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to score.
    #[arg(long, default_value = "test")]
    pub split: SplitTag,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "hml-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `default` or a spec TOML file.
    #[arg(long, default_value = "default")]
    pub spec: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the splits as ARFF plus a DAG sidecar.
    #[arg(long)]
    pub arff: bool,
    #[arg(long, env = OUT_DIR_ENV, default_value = "hml-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub method: PlanMethod,
    #[arg(long, default_value_t = 0.25)]
    pub pct: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "initial")]
    pub ir_target: IrTarget,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "hml-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = crate::imbalance::DEFAULT_W0, allow_negative_numbers = true)]
    pub w0: f64,
    #[arg(long, default_value = "nodes")]
    pub n_classes_mode: NClassesMode,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Where the data comes from, as stored in `config.resolved`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub synth: Option<SynthSpec>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub dag: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn synth_spec(arg: &str) -> Result<SynthSpec> {
    if arg == "default" {
        return Ok(SynthSpec::default());
    }
    let text = std::fs::read_to_string(arg).map_err(|e| Error::Config(format!("synth spec `{arg}`: {e}")))?;
    SynthSpec::from_toml(&text)
}

impl DataArgs {
    /// Overlays these flags on `base`; any flag replaces the whole source kind.
    fn merge(&self, mut base: DataSource) -> Result<DataSource> {
        if let Some(s) = &self.synth {
            base = DataSource {
                synth: Some(synth_spec(s)?),
                dag: base.dag,
                ..Default::default()
            };
        }
        if self.train.is_some() {
            base.synth = None;
            base.train.clone_from(&self.train);
        }
        if self.valid.is_some() {
            base.valid.clone_from(&self.valid);
        }
        if self.test.is_some() {
            base.test.clone_from(&self.test);
        }
        if self.dag.is_some() {
            base.dag.clone_from(&self.dag);
        }
        Ok(base)
    }
}

/// Loaded splits plus the training-column means used for imputation.
pub struct Loaded {
    pub train: Option<Dataset>,
    pub valid: Option<Dataset>,
    pub test: Option<Dataset>,
    pub column_means: Vec<f64>,
}

fn is_native(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "hmld")
}

fn load_one(path: &Path, means: Option<&[f64]>, split: SplitTag) -> Result<(Dataset, Vec<f64>)> {
    if is_native(path) {
        let mut d = native::load(path)?;
        d.split = split;
        Ok((d, Vec::new()))
    } else {
        let a = parse_arff(path, means, split)?;
        Ok((a.dataset, a.column_means))
    }
}

/// Loads every split named by `src`. `known_means` overrides the means
/// computed from the training split.
pub fn load_data(src: &DataSource, known_means: Option<&[f64]>) -> Result<Loaded> {
    let mut out = if let Some(spec) = &src.synth {
        let Splits { train, valid, test } = synth(spec)?;
        Loaded {
            train: Some(train),
            valid: Some(valid),
            test: Some(test),
            column_means: Vec::new(),
        }
    } else {
        if src.train.is_none() && src.valid.is_none() && src.test.is_none() {
            return Err(Error::Config("no data given; use --synth or --train-data/--valid-data/--test-data".into()));
        }
        let mut means: Option<Vec<f64>> = known_means.filter(|m| !m.is_empty()).map(<[f64]>::to_vec);
        let train = match &src.train {
            Some(p) => {
                let (d, m) = load_one(p, means.as_deref(), SplitTag::Train)?;
                if means.is_none() && !m.is_empty() {
                    means = Some(m);
                }
                Some(d)
            }
            None => None,
        };
        let other = |p: &Option<PathBuf>, tag| -> Result<Option<Dataset>> {
            p.as_deref()
                .map(|p| load_one(p, means.as_deref(), tag).map(|(d, _)| d))
                .transpose()
        };
        let valid = other(&src.valid, SplitTag::Valid)?;
        let test = other(&src.test, SplitTag::Test)?;
        Loaded {
            train,
            valid,
            test,
            column_means: means.unwrap_or_default(),
        }
    };
    if let Some(dag) = &src.dag {
        let base = [&out.train, &out.valid, &out.test]
            .into_iter()
            .flatten()
            .next()
            .map(|d| Arc::clone(&d.hierarchy))
            .ok_or_else(|| Error::Config("DAG sidecar given without data".into()))?;
        let h = Arc::new(load_dag_sidecar(dag, &base)?);
        for d in [&mut out.train, &mut out.valid, &mut out.test].into_iter().flatten() {
            *d = d.with_hierarchy(Arc::clone(&h))?;
        }
    }
    let first = [&out.train, &out.valid, &out.test].into_iter().flatten().next().cloned();
    if let Some(first) = first {
        for d in [&out.train, &out.valid, &out.test].into_iter().flatten() {
            if d.hierarchy.node_ids() != first.hierarchy.node_ids() || d.n_features() != first.n_features() {
                return Err(Error::DimensionMismatch(format!(
                    "{} split does not match {} split in nodes or features",
                    d.split, first.split
                )));
            }
        }
    }
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn report_json(r: &MetricsReport) -> serde_json::Value {
    r.to_json_value()
}

pub const HISTORY_HEADER: &str =
    "split,epoch,train_loss,macro_precision,macro_recall,macro_f1,micro_precision,micro_recall,micro_f1,bin_ap,ap";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn history_row(s: &mut String, split: &str, epoch: &str, loss: &str, r: &MetricsReport) {
    let _ = writeln!(
        s,
        "{split},{epoch},{loss},{},{},{},{},{},{},{},{}",
        r.macro_avg.precision,
        r.macro_avg.recall,
        r.macro_avg.f1,
        r.micro.precision,
        r.micro.recall,
        r.micro.f1,
        opt(r.bin_ap),
        opt(r.ap)
    );
}

/// Per-epoch validation rows and the final test row.
pub fn history_csv(history: &[EpochRecord], test: Option<&MetricsReport>) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for h in history {
        match &h.valid {
            Some(r) => history_row(&mut s, "valid", &h.epoch.to_string(), &h.train_loss.to_string(), r),
            None => {
                let _ = writeln!(s, "train,{},{},,,,,,,,", h.epoch, h.train_loss);
            }
        }
    }
    if let Some(r) = test {
        history_row(&mut s, "test", "", "", r);
    }
    s
}

/// Config file values over preset values over defaults.
fn load_run(config: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    let mut table = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    if let Some(name) = preset {
        let mut train = toml::Table::try_from(TrainConfig::preset(name)?).expect("config serializes");
        match table.remove("train") {
            Some(toml::Value::Table(file)) => train.extend(file),
            Some(_) => return Err(Error::Config("`train` must be a table".into())),
            None => {}
        }
        table.insert("train".into(), toml::Value::Table(train));
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut run = load_run(args.config.as_deref(), args.preset.as_deref())?;
    run.data = args.data.merge(run.data)?;
    args.flags.apply(&mut run.train);
    run.train.validate()?;
    let cfg = &run.train;

    let data = load_data(&run.data, None)?;
    let train_set = data.train.as_ref().ok_or_else(|| Error::Config("training data required".into()))?;
    std::fs::create_dir_all(&args.out)?;
    write(&args.out.join("config.resolved"), run.to_toml())?;

    let outcome = train(train_set, data.valid.as_ref(), cfg)?;
    let test = data
        .test
        .as_ref()
        .map(|t| outcome.ensemble.evaluate(t, cfg.threshold))
        .transpose()?;

    let epochs: Vec<serde_json::Value> = outcome
        .history
        .iter()
        .map(|h| {
            json!({
                "epoch": h.epoch,
                "train_loss": h.train_loss,
                "valid": h.valid.as_ref().map(report_json),
            })
        })
        .collect();
    let metrics = json!({
        "config_hash": config_hash(cfg),
        "epochs": epochs,
        "test": test.as_ref().map(report_json),
    });
    write(&args.out.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("json") + "\n")?;
    write(&args.out.join("metrics.csv"), history_csv(&outcome.history, test.as_ref()))?;
    if let Some(t) = &test {
        write(&args.out.join("per-node.csv"), t.to_csv())?;
    }
    if let Some(plan) = &outcome.plan {
        write(&args.out.join("resample-plan.txt"), plan.to_text())?;
    }
    checkpoint::save(
        &args.out.join("model.ckpt"),
        &Checkpoint {
            config: cfg.clone(),
            hierarchy: (*train_set.hierarchy).clone(),
            column_means: data.column_means.clone(),
            ensemble: outcome.ensemble,
        },
    )?;
    log::info!("wrote artifacts to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let data = load_data(&args.data.merge(DataSource::default())?, Some(&ckpt.column_means))?;
    let d = match args.split {
        SplitTag::Train => data.train,
        SplitTag::Valid => data.valid,
        SplitTag::Test => data.test,
    }
    .ok_or_else(|| Error::Config(format!("no {} split given", args.split)))?;
    if d.hierarchy.node_ids() != ckpt.hierarchy.node_ids() {
        return Err(Error::DimensionMismatch("dataset nodes differ from the checkpoint's".into()));
    }
    if d.n_features() != ckpt.ensemble.n_in() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint expects {} features, dataset has {}",
            ckpt.ensemble.n_in(),
            d.n_features()
        )));
    }
    let threshold = args.threshold.unwrap_or(ckpt.config.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let r = ckpt.ensemble.evaluate(&d, threshold)?;
    std::fs::create_dir_all(&args.out)?;
    let metrics = json!({
        "config_hash": config_hash(&ckpt.config),
        "split": d.split,
        "metrics": report_json(&r),
    });
    write(&args.out.join("eval-metrics.json"), serde_json::to_string_pretty(&metrics).expect("json") + "\n")?;
    write(&args.out.join("eval-per-node.csv"), r.to_csv())?;
    println!(
        "{}: macro F1 {:.6}, micro F1 {:.6}, AP {}",
        d.split,
        r.macro_avg.f1,
        r.micro.f1,
        opt(r.ap)
    );
    Ok(())
}

pub const FREQ_HEADER: &str = "node,depth,count,freq";

fn frequency_csv(d: &Dataset) -> String {
    let f = d.frequencies();
    let mut s = String::from(FREQ_HEADER);
    s.push('\n');
    for (i, id) in d.hierarchy.node_ids().iter().enumerate() {
        let _ = writeln!(s, "{id},{},{},{}", d.hierarchy.depth(i), f.counts[i], f.freq[i]);
    }
    s
}

/// Spearman correlation between node frequency and depth.
pub fn depth_correlation(d: &Dataset) -> Option<f64> {
    let freq = d.frequencies().freq.to_vec();
    let depth: Vec<f64> = d.hierarchy.depths().iter().map(|&x| x as f64).collect();
    spearman(&freq, &depth)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = synth_spec(&args.spec)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let splits = synth(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    write(&args.out.join("synth.toml"), spec.to_toml())?;
    for tag in SplitTag::ALL {
        let d = splits.get(tag);
        native::save(&args.out.join(format!("{tag}.hmld")), d)?;
        if args.arff {
            write(
                &args.out.join(format!("{tag}.arff")),
                crate::data::arff::to_arff_string(d, &format!("synth_{tag}")),
            )?;
        }
    }
    if args.arff {
        write(&args.out.join("dag.tsv"), splits.train.hierarchy.to_sidecar())?;
    }
    write(&args.out.join("frequencies.csv"), frequency_csv(&splits.train))?;
    println!(
        "{} nodes, rows train/valid/test = {}/{}/{}, frequency-depth Spearman {}",
        splits.train.n_nodes(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        opt(depth_correlation(&splits.train))
    );
    Ok(())
}

fn training_split(args: &DataArgs) -> Result<Dataset> {
    let data = load_data(&args.merge(DataSource::default())?, None)?;
    data.train.ok_or_else(|| Error::Config("training data required".into()))
}

pub const RESAMPLE_HEADER: &str = "node,count_before,count_after,freq_before,freq_after";

fn cmd_resample(args: &ResampleArgs) -> Result<()> {
    let d = training_split(&args.data)?;
    let plan = match args.method {
        PlanMethod::Lpros => lpros(&d.labels, args.pct, args.seed)?,
        PlanMethod::HrosPd => hros_pd(&d.labels, &d.hierarchy, args.ir_target, args.seed)?,
    };
    let before = d.frequencies();
    let after = weights_after_resample(&plan, &d.labels)?;
    std::fs::create_dir_all(&args.out)?;
    write(&args.out.join("plan.txt"), plan.to_text())?;
    let mut s = String::from(RESAMPLE_HEADER);
    s.push('\n');
    for (i, id) in d.hierarchy.node_ids().iter().enumerate() {
        let _ = writeln!(
            s,
            "{id},{},{},{},{}",
            before.counts[i], after.counts[i], before.freq[i], after.freq[i]
        );
    }
    write(&args.out.join("resample-frequencies.csv"), s)?;
    let resampled = d.labels.select_rows(&plan.index_multiset);
    println!(
        "rows {} -> {}; labelset count deviation {:.6} -> {:.6}",
        d.len(),
        plan.len(),
        labelset_deviation(&d.labels),
        labelset_deviation(&resampled)
    );
    Ok(())
}

pub const WEIGHTS_HEADER: &str = "node,n,f,w,w_tilde";

/// Weight table sorted by decreasing frequency, ties by node order.
pub fn weights_csv(d: &Dataset, w0: f64, mode: NClassesMode) -> Result<String> {
    if d.is_empty() {
        return Err(Error::NotDefined("weights of an empty dataset"));
    }
    let f = d.frequencies();
    let w = ImbalanceWeights::compute(&f, mode, w0)?;
    let mut order: Vec<usize> = (0..d.n_nodes()).collect();
    order.sort_by(|&a, &b| f.counts[b].cmp(&f.counts[a]).then(a.cmp(&b)));
    let mut s = String::from(WEIGHTS_HEADER);
    s.push('\n');
    for i in order {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            d.hierarchy.node_ids()[i],
            f.counts[i],
            f.freq[i],
            w.raw[i],
            w.rescaled[i]
        );
    }
    Ok(s)
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    if !(args.w0 >= 0.0 && args.w0.is_finite()) {
        return Err(Error::Config(format!("w0 must be non-negative, got {}", args.w0)));
    }
    let d = training_split(&args.data)?;
    let table = weights_csv(&d, args.w0, args.n_classes_mode)?;
    match &args.output {
        Some(p) => write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

/// Exit status for an error: 2 for configuration and dimension problems,
/// 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::DimensionMismatch(_) | Error::Shape { .. } => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Resample(a) => cmd_resample(a),
        Command::InspectWeights(a) => cmd_inspect(a),
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
