//! `treerules` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input error,
//! 3 rules and model disagree (`verify`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use treerules_core::data::{self, DataConfig, Dataset};
use treerules_core::explain::{self, FeatureDictionary, SampleRef};
use treerules_core::extract::{self, RuleSet};
use treerules_core::io::{fmt_f64, write_atomic};
use treerules_core::rulepredict::{self, CompiledRules};
use treerules_core::{cart, forest, interchange, synth, Model, NamedModel, TreeParams};

/// Directory used to resolve relative `--config` and `--dictionary` paths
/// that do not exist relative to the working directory.
const CONFIG_DIR_ENV: &str = "TREERULES_CONFIG_DIR";

#[derive(Parser)]
#[command(
    name = "treerules",
    version,
    about = "Transpile tree ensembles into verifiable if-then rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a decision tree or random forest and write it as interchange JSON.
    Train(TrainArgs),
    /// Extract the rule CSV and nested-if text from a model.
    Extract(ExtractArgs),
    /// Predict probabilities from a rule file alone.
    Predict(PredictArgs),
    /// Check that rules reproduce the model's probabilities exactly.
    Verify(VerifyArgs),
    /// Show the decision path of one or more clients, or of a group.
    Explain(ExplainArgs),
    /// ROC curve and AUC of a model on a dataset.
    Report(ReportArgs),
    /// Per-feature statistics by target class.
    Summarize(SummarizeArgs),
    /// Generate a synthetic lending dataset with its config and dictionary.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML schema naming the features, target column and label mapping.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Dt,
    Rf,
}

/// A positive bound, or `none` for no bound.
#[derive(Clone, Copy, Debug)]
struct Limit(Option<usize>);

impl FromStr for Limit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Limit(None));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive integer or `none`, got {s:?}")),
            Ok(v) => Ok(Limit(Some(v))),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "dt")]
    kind: Kind,
    /// Default: 5 for dt, 10 for rf.
    #[arg(long)]
    max_depth: Option<Limit>,
    /// Features drawn per split. Default: 50 for dt, 4 for rf.
    #[arg(long)]
    max_features: Option<Limit>,
    /// Default: 10 for dt, none for rf.
    #[arg(long)]
    max_leaf_nodes: Option<Limit>,
    #[arg(long, default_value_t = 2)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 5)]
    n_estimators: usize,
    /// Train every forest tree on the full training split.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the held-out split as CSV.
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Also write the training split as CSV.
    #[arg(long)]
    train_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rules_out: PathBuf,
    /// Write the nested-if rendering here instead of stdout.
    #[arg(long)]
    text_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    rules: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Use the compiled dispatch instead of scanning rules.
    #[arg(long)]
    compiled: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Per-sample report CSV with a statistics footer.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Row index of a client; repeat for several clients.
    #[arg(long, required_unless_present = "group", conflicts_with = "group")]
    sample: Vec<usize>,
    /// Comma-separated row indices explained as one group.
    #[arg(long, value_delimiter = ',')]
    group: Option<Vec<usize>>,
    /// CSV `feature_name,description` used in the text rendering.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Also write the paths as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// ROC points as `fpr,tpr` CSV.
    #[arg(long)]
    roc_out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50_000)]
    rows: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config_out: Option<PathBuf>,
    #[arg(long)]
    dictionary_out: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    NotEquivalent,
}

impl From<treerules_core::Error> for Failure {
    fn from(e: treerules_core::Error) -> Self {
        if e.is_input_error() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<treerules_core::Error>() {
            Ok(core) => core.into(),
            Err(e) => Failure::Runtime(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Report(a) => cmd_report(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::NotEquivalent) => ExitCode::from(3),
    }
}

fn resolve_config_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    // an unreadable config is a configuration problem whatever the cause
    let cfg = DataConfig::load(resolve_config_path(&args.config)).map_err(|e| Failure::Config(e.into()))?;
    let (data, report) = data::load_csv(&args.data, &cfg.schema, cfg.options)?;
    let dropped = report.dropped_unmapped + report.dropped_missing + report.dropped_unparseable;
    if dropped > 0 || report.imputed_cells > 0 {
        eprintln!(
            "loaded {} of {} rows ({} unmapped label, {} missing values, {} unparseable; {} cells imputed)",
            data.n_samples(),
            report.rows_read,
            report.dropped_unmapped,
            report.dropped_missing,
            report.dropped_unparseable,
            report.imputed_cells
        );
    }
    Ok(data)
}

fn load_model(path: &Path) -> Result<NamedModel, Failure> {
    Ok(interchange::import_json(path)?)
}

fn load_rules(path: &Path) -> Result<RuleSet, Failure> {
    Ok(extract::load_rules_csv(path)?)
}

/// Fails with a config error unless the dataset columns are the model's
/// features, in order.
fn check_columns(data: &Dataset, names: &[String]) -> CmdResult {
    if data.schema().features() != names {
        return Err(Failure::Config(anyhow!(
            "dataset features {:?} do not match the model's {:?}",
            data.schema().features(),
            names
        )));
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn pick(flag: Option<Limit>, default: Option<usize>) -> Option<usize> {
    flag.map_or(default, |l| l.0)
}

fn model_scores(model: &Model, data: &Dataset) -> Result<Vec<f64>, Failure> {
    data.rows().map(|row| Ok(model.predict_proba(row)?[1])).collect()
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let data = load_data(&a.data)?;
    let (train, test) = data::split(&data, a.train_frac, a.seed)?;
    let (depth, features, leaves) = match a.kind {
        Kind::Dt => (Some(5), Some(50), Some(10)),
        Kind::Rf => (Some(10), Some(4), None),
    };
    let tree_params = TreeParams {
        max_depth: pick(a.max_depth, depth),
        max_features: pick(a.max_features, features),
        max_leaf_nodes: pick(a.max_leaf_nodes, leaves),
        min_samples_split: a.min_samples_split,
        seed: a.seed,
    };
    let model = match a.kind {
        Kind::Dt => Model::Tree(cart::fit_tree(&train, &tree_params)?),
        Kind::Rf => Model::Forest(forest::fit_forest(
            &train,
            &forest::ForestParams {
                n_estimators: a.n_estimators,
                tree_params,
                bootstrap: !a.no_bootstrap,
                seed: a.seed,
            },
        )?),
    };
    let names = data.schema().features().to_vec();
    interchange::export_json(&model, &names, &a.out)?;
    if let Some(p) = &a.test_out {
        test.write_csv(p)?;
    }
    if let Some(p) = &a.train_out {
        train.write_csv(p)?;
    }

    let leaves: Vec<String> = model.trees().iter().map(|t| t.n_leaves().to_string()).collect();
    println!("trees: {}", model.trees().len());
    println!("leaves per tree: {}", leaves.join(" "));
    println!(
        "train samples: {}, test samples: {}",
        train.n_samples(),
        test.n_samples()
    );
    for (name, part) in [("train", &train), ("test", &test)] {
        if part.is_empty() {
            continue;
        }
        match rulepredict::roc_auc(&model_scores(&model, part)?, part.targets()) {
            Ok(roc) => println!("{name} ROC-AUC: {:.4}", roc.auc),
            Err(e) => println!("{name} ROC-AUC: n/a ({e})"),
        }
    }
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> CmdResult {
    let named = load_model(&a.model)?;
    let rules = extract::model_2rules(&named.model, &named.feature_names)?;
    extract::emit_csv(&rules, &a.rules_out)?;
    let text = extract::emit_text(&rules)?;
    match &a.text_out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    eprintln!("{} rules from {} trees", rules.len(), rules.n_trees());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let rules = load_rules(&a.rules)?;
    let data = load_data(&a.data)?;
    check_columns(&data, rules.feature_names())?;
    let compiled = if a.compiled {
        Some(CompiledRules::compile(&rules)?)
    } else {
        None
    };
    let mut out = String::from("sample_index,p0,p1\n");
    for (i, row) in data.rows().enumerate() {
        let p = match &compiled {
            Some(c) => c.predict(row)?,
            None => rulepredict::rule_predict(&rules, row)?,
        };
        let _ = writeln!(out, "{i},{},{}", fmt_f64(p[0]), fmt_f64(p[1]));
    }
    write_file(&a.out, &out)?;
    eprintln!("{} predictions written", data.n_samples());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let named = load_model(&a.model)?;
    let rules = load_rules(&a.rules)?;
    let data = load_data(&a.data)?;
    check_columns(&data, &named.feature_names)?;
    let report = rulepredict::verify_equivalence(&named.model, &rules, &data)?;
    if let Some(p) = &a.out {
        report.write_csv(p)?;
    }
    println!(
        "{:<14} {:>12} {:>12} {:>12}",
        "statistic", "rules", "model", "difference"
    );
    for ((name, r), (_, m)) in report.rule_stats.rows().into_iter().zip(report.model_stats.rows()) {
        println!("{name:<14} {r:>12.3} {m:>12.3} {:>12.3}", (r - m).abs());
    }
    println!("samples: {}", report.per_sample.len());
    println!("max abs difference: {}", fmt_f64(report.max_abs_difference));
    if report.is_exact() {
        println!("rules reproduce the model exactly");
        Ok(())
    } else {
        let n = report.per_sample.iter().filter(|s| s.abs_difference != 0.0).count();
        println!("rules differ from the model on {n} samples");
        Err(Failure::NotEquivalent)
    }
}

fn cmd_explain(a: ExplainArgs) -> CmdResult {
    let named = load_model(&a.model)?;
    let rules = load_rules(&a.rules)?;
    let data = load_data(&a.data)?;
    check_columns(&data, &named.feature_names)?;
    let dictionary = match &a.dictionary {
        Some(p) => FeatureDictionary::load(resolve_config_path(p)).map_err(|e| Failure::Config(e.into()))?,
        None => FeatureDictionary::default(),
    };
    let row = |i: usize| -> Result<&[f64], Failure> {
        if i >= data.n_samples() {
            return Err(Failure::Config(anyhow!(
                "sample {i} out of range: dataset has {} rows",
                data.n_samples()
            )));
        }
        Ok(data.row(i))
    };

    let mut paths = Vec::new();
    if let Some(group) = &a.group {
        let rows = group.iter().map(|&i| row(i)).collect::<Result<Vec<_>, _>>()?;
        let path = explain::group_path(&named.model, &rules, &rows)?;
        paths.push(path.with_ref(SampleRef::Group(group.clone())));
    } else {
        for &i in &a.sample {
            let path = explain::display_rule_per_estimator(&named.model, &rules, row(i)?)?;
            paths.push(path.with_ref(SampleRef::Index(i)));
        }
    }

    for path in &paths {
        match &path.sample_ref {
            Some(SampleRef::Group(g)) => {
                let ids: Vec<String> = g.iter().map(usize::to_string).collect();
                println!("group {}:", ids.join(","));
            }
            Some(SampleRef::Index(i)) => println!("client {i}:"),
            _ => {}
        }
        print!("{}", explain::render_text(path, &dictionary));
    }
    if let Some(p) = &a.json_out {
        let docs: Vec<_> = paths.iter().map(|p| explain::render_json(p, &dictionary)).collect();
        let text = serde_json_pretty(&docs)?;
        write_file(p, &text)?;
    }
    Ok(())
}

fn serde_json_pretty(v: &[serde_json::Value]) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).context("serializing decision paths")?;
    s.push('\n');
    Ok(s)
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let named = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    check_columns(&data, &named.feature_names)?;
    let roc = rulepredict::roc_auc(&model_scores(&named.model, &data)?, data.targets())?;
    if let Some(p) = &a.roc_out {
        write_file(p, &roc.to_csv_string())?;
    }
    println!("samples: {}", data.n_samples());
    println!("ROC points: {}", roc.points.len());
    println!("AUC: {}", fmt_f64(roc.auc));
    Ok(())
}

fn cmd_summarize(a: SummarizeArgs) -> CmdResult {
    let data = load_data(&a.data)?;
    let mut out = String::from("feature,class,count,mean,std,min,q25,q50,q75,max\n");
    for s in data::summarize(&data)? {
        let st = s.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.feature,
            s.class,
            st.count,
            fmt_f64(st.mean),
            fmt_f64(st.std),
            fmt_f64(st.min),
            fmt_f64(st.q25),
            fmt_f64(st.q50),
            fmt_f64(st.q75),
            fmt_f64(st.max)
        );
    }
    match &a.out {
        Some(p) => write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    write_file(&a.out, &synth::lending_csv(a.rows, a.seed))?;
    if let Some(p) = &a.config_out {
        write_file(p, &synth::lending_config().to_toml())?;
    }
    if let Some(p) = &a.dictionary_out {
        write_file(p, &synth::dictionary_csv())?;
    }
    Ok(())
}
