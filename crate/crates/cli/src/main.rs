//! `rca`: dataset generation, oracle diagnosis, SFT data, training,
//! evaluation and method comparison driven by one JSON config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rca_core::agentpipe::{build_sft_dataset, PipelineConfig};
use rca_core::evalharness::{compare_methods, evaluate, AnswerPolicy, EvalConfig, EvalReport, OracleWrapper, Variant};
use rca_core::oracle::{detect_symptom, diagnose_on};
use rca_core::promptkit::{generate_dataset, parse_query, read_jsonl, vocab_hash, write_jsonl, DatasetRecord};
use rca_core::seeding::stage_seed;
use rca_core::simulator::GenerationConfig;
use rca_core::trainer::{
    feature_spec_hash, train_grpo, train_sft, train_two_stage, Checkpoint, Policy, PolicySnapshot, RlExample,
    SftExample, SnapshotRole, TrainConfig,
};

const SCHEMA_VERSION: u32 = 1;
const METHODS: [Method; 4] = [Method::Base, Method::Sft, Method::Rl, Method::SftRl];

#[derive(Parser)]
#[command(name = "rca", version, about = "Root cause analysis workbench for drive-test throughput drops")]
struct Cli {
    /// JSON run config; flags take precedence over its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate balanced train and test datasets.
    Gen,
    /// Run the rule oracle over a dataset and report agreement.
    Diagnose {
        /// Dataset file; defaults to the test split in the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the structured trace of the record with this instance id.
        #[arg(long)]
        show_trace: Option<String>,
    },
    /// Build the SFT dataset from the train split through the agent pipeline.
    Sftdata,
    /// Train a policy.
    Train {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Evaluate a trained policy (or the oracle) on the test split.
    Eval {
        #[arg(long, value_enum)]
        method: EvalTarget,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        rand_seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Tabulate every available evaluation report for one variant.
    Compare {
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Base,
    Sft,
    Rl,
    #[value(name = "sft+rl")]
    SftRl,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Sft => "sft",
            Method::Rl => "rl",
            Method::SftRl => "sft+rl",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Method::SftRl => "sft_rl",
            m => m.name(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalTarget {
    Base,
    Sft,
    Rl,
    #[value(name = "sft+rl")]
    SftRl,
    Oracle,
}

impl EvalTarget {
    fn method(self) -> Option<Method> {
        match self {
            EvalTarget::Base => Some(Method::Base),
            EvalTarget::Sft => Some(Method::Sft),
            EvalTarget::Rl => Some(Method::Rl),
            EvalTarget::SftRl => Some(Method::SftRl),
            EvalTarget::Oracle => None,
        }
    }

    fn slug(self) -> &'static str {
        self.method().map_or("oracle", Method::slug)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Randomized,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => Variant::Standard,
            VariantArg::Randomized => Variant::Randomized,
        }
    }
}

fn variant_slug(v: Variant) -> &'static str {
    match v {
        Variant::Standard => "standard",
        Variant::Randomized => "randomized",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GenSection {
    train_per_cause: usize,
    test_per_cause: usize,
    #[serde(flatten)]
    config: GenerationConfig,
}

impl Default for GenSection {
    fn default() -> Self {
        Self { train_per_cause: 100, test_per_cause: 25, config: GenerationConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: u64,
    out: PathBuf,
    generation: GenSection,
    /// Absent: mock agents, or remote ones when the endpoint is set in the environment.
    pipeline: Option<PipelineConfig>,
    train: TrainConfig,
    eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("rca-out"),
            generation: GenSection::default(),
            pipeline: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if config.pipeline.is_none() {
        config.pipeline = Some(PipelineConfig::from_env());
    }
    // Stage seeds always come from the master seed.
    config.train.seed = stage_seed(config.seed, "train");
    config.eval.seed = stage_seed(config.seed, "eval");
    Ok(config)
}

fn redact(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if k == "api_key" && !v.is_null() {
                    *v = Value::String("<redacted>".into());
                } else {
                    redact(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(config: &RunConfig, command: &str, extra: Value) -> Result<()> {
    let mut echoed = serde_json::to_value(config)?;
    redact(&mut echoed);
    let manifest = serde_json::json!({
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "master_seed": config.seed,
        "stage_seeds": {
            "gen_train": stage_seed(config.seed, "gen-train"),
            "gen_test": stage_seed(config.seed, "gen-test"),
            "train": config.train.seed,
            "eval": config.eval.seed,
        },
        "vocab_hash": vocab_hash(),
        "feature_hash": feature_spec_hash(),
        "config": echoed,
        "result": extra,
    });
    write_json(&config.out.join(format!("{command}_manifest.json")), &manifest)
}

fn require(path: &Path) -> Result<&Path> {
    if !path.exists() {
        bail!("missing upstream artifact {}", path.display());
    }
    Ok(path)
}

fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    read_jsonl(require(path)?).with_context(|| format!("reading {}", path.display()))
}

fn train_path(c: &RunConfig) -> PathBuf {
    c.out.join("train.jsonl")
}

fn test_path(c: &RunConfig) -> PathBuf {
    c.out.join("test.jsonl")
}

fn sft_path(c: &RunConfig) -> PathBuf {
    c.out.join("sft.jsonl")
}

fn policy_path(c: &RunConfig, m: Method) -> PathBuf {
    c.out.join(format!("policy_{}.json", m.slug()))
}

fn report_path(c: &RunConfig, target: EvalTarget, v: Variant) -> PathBuf {
    c.out.join(format!("eval_{}_{}.json", target.slug(), variant_slug(v)))
}

fn cmd_gen(c: &RunConfig) -> Result<()> {
    let g = &c.generation;
    if g.train_per_cause == 0 || g.test_per_cause == 0 {
        bail!("generation counts must be positive");
    }
    let (train, train_stats) = generate_dataset(&g.config, g.train_per_cause, stage_seed(c.seed, "gen-train"))?;
    let (test, test_stats) = generate_dataset(&g.config, g.test_per_cause, stage_seed(c.seed, "gen-test"))?;
    write_jsonl(&train_path(c), &train)?;
    write_jsonl(&test_path(c), &test)?;
    println!(
        "train: {} records (retry rate {:.4}); test: {} records (retry rate {:.4})",
        train.len(),
        train_stats.retry_rate(),
        test.len(),
        test_stats.retry_rate()
    );
    write_manifest(
        c,
        "gen",
        serde_json::json!({
            "train": { "records": train.len(), "stats": train_stats, "retry_rate": train_stats.retry_rate() },
            "test": { "records": test.len(), "stats": test_stats, "retry_rate": test_stats.retry_rate() },
        }),
    )
}

#[derive(Serialize)]
struct DiagnoseRow {
    instance_id: String,
    truth: String,
    predicted: Option<String>,
    error: Option<String>,
}

fn cmd_diagnose(c: &RunConfig, data: Option<&Path>, show: Option<&str>) -> Result<()> {
    let path = data.map_or_else(|| test_path(c), Path::to_path_buf);
    let records = read_records(&path)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let parsed = parse_query(&r.query.text)?;
        let carriers = vec![0; parsed.cells.len()];
        let outcome = detect_symptom(&parsed.trace).and_then(|s| {
            let s = s.ok_or(rca_core::RcaError::Undiagnosable)?;
            diagnose_on(&parsed.cells, &carriers, &parsed.trace, &s, &r.query.catalog)
        });
        let row = match outcome {
            Ok(d) => {
                if show == Some(r.instance_id.as_str()) {
                    println!("{}", d.trace.to_text());
                }
                DiagnoseRow {
                    instance_id: r.instance_id.clone(),
                    truth: r.ground_truth_label.clone(),
                    predicted: Some(r.query.catalog.label_of(d.cause).to_string()),
                    error: None,
                }
            }
            Err(e) => DiagnoseRow {
                instance_id: r.instance_id.clone(),
                truth: r.ground_truth_label.clone(),
                predicted: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    if let Some(id) = show {
        if !records.iter().any(|r| r.instance_id == id) {
            bail!("no record with instance id {id}");
        }
    }
    let agree = rows.iter().filter(|r| r.predicted.as_deref() == Some(r.truth.as_str())).count();
    let agreement = agree as f64 / rows.len() as f64;
    println!("oracle agreement: {agree}/{} = {agreement:.4}", rows.len());
    write_json(
        &c.out.join("diagnose_report.json"),
        &serde_json::json!({ "data": path, "agreement": agreement, "records": rows }),
    )?;
    write_manifest(c, "diagnose", serde_json::json!({ "agreement": agreement }))
}

fn cmd_sftdata(c: &RunConfig) -> Result<()> {
    let train = read_records(&train_path(c))?;
    let pipeline = c.pipeline.clone().unwrap_or_default();
    let report = build_sft_dataset(&train, &pipeline)?;
    write_jsonl(&sft_path(c), &report.records)?;
    println!(
        "sft records: {} (acceptance {:.4}, mean token ratio {:.4})",
        report.records.len(),
        report.acceptance_rate,
        report.mean_token_ratio
    );
    let summary = serde_json::json!({
        "records": report.records.len(),
        "acceptance_rate": report.acceptance_rate,
        "mean_token_ratio": report.mean_token_ratio,
        "ratio_histogram": report.ratio_histogram,
        "rejected": report.rejected,
        "failures": report.failures,
    });
    write_json(&c.out.join("sftdata_report.json"), &summary)?;
    write_manifest(c, "sftdata", summary)
}

fn sft_examples(c: &RunConfig) -> Result<Vec<SftExample>> {
    read_records(&sft_path(c))?.iter().map(|r| SftExample::from_record(r).map_err(Into::into)).collect()
}

fn rl_examples(c: &RunConfig) -> Result<Vec<RlExample>> {
    read_records(&train_path(c))?.iter().map(|r| RlExample::from_record(r).map_err(Into::into)).collect()
}

fn cmd_train(c: &RunConfig, method: Method) -> Result<()> {
    c.train.validate()?;
    let base = Policy::init(c.train.seed, c.train.init_scale);
    let (policy, log) = match method {
        Method::Base => (base, Value::Null),
        Method::Sft => {
            let (p, log) = train_sft(&base, &sft_examples(c)?, &c.train)?;
            (p, serde_json::to_value(log)?)
        }
        Method::Rl => {
            let reference = PolicySnapshot::new(&base, SnapshotRole::Reference);
            let (p, log) = train_grpo(&base, &reference, &rl_examples(c)?, &c.train, c.train.rl_steps)?;
            (p, serde_json::to_value(log)?)
        }
        Method::SftRl => {
            let result = train_two_stage(&base, &sft_examples(c)?, &rl_examples(c)?, &c.train)?;
            (result.rl_policy, serde_json::to_value(result.log)?)
        }
    };
    let path = policy_path(c, method);
    Checkpoint::new(&policy, method.name(), &c.train).save(&path)?;
    write_json(&c.out.join(format!("train_log_{}.json", method.slug())), &log)?;
    println!("trained {} -> {}", method.name(), path.display());
    write_manifest(c, &format!("train_{}", method.slug()), serde_json::json!({ "checkpoint": path }))
}

fn cmd_eval(c: &RunConfig, target: EvalTarget) -> Result<()> {
    let test = read_records(&test_path(c))?;
    let checkpoint;
    let policy: &dyn AnswerPolicy = match target.method() {
        Some(m) => {
            checkpoint = Checkpoint::load(require(&policy_path(c, m))?)?.policy();
            &checkpoint
        }
        None => &OracleWrapper,
    };
    let report = evaluate(policy, &test, &c.eval)?;
    let path = report_path(c, target, c.eval.variant);
    write_json(&path, &report)?;
    println!(
        "{} [{}]: pass@1 {:.4}  maj@{} {:.4}  flagged {}",
        target.slug(),
        variant_slug(c.eval.variant),
        report.pass_at_1,
        c.eval.samples,
        report.maj_at_k,
        report.flagged
    );
    write_manifest(
        c,
        &format!("eval_{}_{}", target.slug(), variant_slug(c.eval.variant)),
        serde_json::json!({ "report": path, "pass_at_1": report.pass_at_1, "maj_at_k": report.maj_at_k }),
    )
}

fn cmd_compare(c: &RunConfig) -> Result<()> {
    let variant = c.eval.variant;
    let mut reports = Vec::new();
    for m in METHODS {
        let path = report_path(c, EvalTarget::from_method(m), variant);
        if path.exists() {
            let report: EvalReport = serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            reports.push((m.name().to_string(), report));
        }
    }
    if reports.len() < 2 {
        bail!(
            "compare needs at least two {} evaluation reports in {}",
            variant_slug(variant),
            c.out.display()
        );
    }
    let table = compare_methods(&reports)?;
    let text = table.to_text();
    print!("{text}");
    let stem = format!("comparison_{}", variant_slug(variant));
    write_json(&c.out.join(format!("{stem}.json")), &table)?;
    fs::write(c.out.join(format!("{stem}.txt")), &text)?;
    write_manifest(c, "compare", serde_json::to_value(&table)?)
}

impl EvalTarget {
    fn from_method(m: Method) -> Self {
        match m {
            Method::Base => EvalTarget::Base,
            Method::Sft => EvalTarget::Sft,
            Method::Rl => EvalTarget::Rl,
            Method::SftRl => EvalTarget::SftRl,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    match &cli.command {
        Command::Gen => cmd_gen(&config),
        Command::Diagnose { data, show_trace } => cmd_diagnose(&config, data.as_deref(), show_trace.as_deref()),
        Command::Sftdata => cmd_sftdata(&config),
        Command::Train { method } => cmd_train(&config, *method),
        Command::Eval { method, variant, rand_seed, samples } => {
            if let Some(v) = variant {
                config.eval.variant = (*v).into();
            }
            if let Some(s) = rand_seed {
                config.eval.randomization_seed = *s;
            }
            if let Some(n) = samples {
                config.eval.samples = *n;
            }
            cmd_eval(&config, *method)
        }
        Command::Compare { variant } => {
            if let Some(v) = variant {
                config.eval.variant = (*v).into();
            }
            cmd_compare(&config)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
