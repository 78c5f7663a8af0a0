//! The `ebr` command line: validate datasets, rescale judgments, run
//! baselines, evaluate against references, measure agreement, and check
//! run-to-run stability.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 validation
//! or evaluation failure, 2 usage error, 3 backend failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{
    self, fit_avg_ebr_mapping, optimize_msh_deduction, score_with_mapping, score_with_msh,
    static_mapping,
};
use crate::io::{self, DatasetBundle};
use crate::llm::{self, BackendConfig, CacheMode, LlmClient, DEFAULT_API_KEY_ENV};
use crate::manifest::RunManifest;
use crate::metrics::{
    label_ranks_by_annotator, pairwise_aggregate_tau, scores_by_annotator, MetricsError,
    DEFAULT_MIN_OVERLAP,
};
use crate::model::{Method, Rubric, ScoredJudgment};
use crate::prompt::{PromptTemplates, PromptVariant};
use crate::report::{
    self, agreement_shift, eval_report_records, evaluate_against_reference, expert_agreement,
    render_eval_table, render_stability_table, score_points, EvalReport, MetricRecord, Slice,
};
use crate::rescale::{rescale_bundle, RescalePolicy, RubricOracleBackend, ScoringBackend};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations: exit 2.
    Usage(String),
    /// Bad input data or an evaluation that cannot proceed: exit 1.
    Data(String),
    /// A scoring backend failed: exit 3.
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::manifest::ManifestError> for CliError {
    fn from(e: crate::manifest::ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<report::ReportError> for CliError {
    fn from(e: report::ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<baselines::BaselineError> for CliError {
    fn from(e: baselines::BaselineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<llm::LlmError> for CliError {
    fn from(e: llm::LlmError) -> Self {
        match e {
            llm::LlmError::BadConfig(m) => CliError::Usage(m),
            other => CliError::Backend(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ebr",
    version,
    about = "Rescale ordinal judgments with explanations onto a rubric-anchored 0-100 scale and evaluate the result"
)]
struct Cli {
    /// Directory with documents.jsonl, items.jsonl, judgments.jsonl and
    /// optionally references.jsonl.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Emit machine-readable records to stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every dataset invariant and report all violations.
    Validate {
        /// Treat warnings as errors.
        #[arg(long)]
        strict: bool,
    },
    /// Score every judgment through a backend under the extreme-label
    /// policy.
    Rescale(RescaleArgs),
    /// Run a non-LLM scoring baseline.
    Baseline(BaselineArgs),
    /// Compare score files against reference scores.
    Evaluate(EvaluateArgs),
    /// Pairwise annotator agreement before and after rescaling.
    Agreement(AgreementArgs),
    /// Rescale repeatedly and report run-to-run spread.
    Stability(StabilityArgs),
    /// Entry count and size of a response cache directory.
    CacheStats {
        #[arg(long)]
        cache_dir: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    /// Deterministic offline backend; needs per_sentence_deduction in
    /// the rubric.
    Oracle,
    /// OpenAI-compatible chat-completions endpoint.
    Live,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantChoice {
    WithRubric,
    WithoutRubric,
}

impl From<VariantChoice> for PromptVariant {
    fn from(v: VariantChoice) -> Self {
        match v {
            VariantChoice::WithRubric => PromptVariant::WithRubric,
            VariantChoice::WithoutRubric => PromptVariant::WithoutRubric,
        }
    }
}

/// Connection flags shared by every command that can talk to a live
/// backend.
#[derive(Args)]
struct LiveArgs {
    #[arg(long, default_value = "https://api.openai.com/v1")]
    base_url: String,

    #[arg(long, default_value = "gpt-4-0613")]
    model: String,

    #[arg(long, default_value_t = 0.0)]
    temperature: f64,

    #[arg(long, default_value_t = 200)]
    max_tokens: u32,

    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,

    #[arg(long, default_value_t = 4)]
    max_retries: u32,

    #[arg(long, default_value = "llm-cache")]
    cache_dir: PathBuf,

    /// Environment variable holding the bearer token.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
}

impl LiveArgs {
    fn config(&self, concurrency: usize, cache_mode: CacheMode, cache_dir: PathBuf) -> BackendConfig {
        BackendConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_response_tokens: self.max_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            concurrency_limit: concurrency,
            cache_dir,
            cache_mode,
            api_key_env: self.api_key_env.clone(),
            retry_initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Args)]
struct RescaleArgs {
    /// Rubric document (aspect, definition, scale, rules).
    #[arg(long)]
    rubric: PathBuf,

    #[arg(long, value_enum, default_value_t = BackendChoice::Oracle)]
    backend: BackendChoice,

    #[arg(long, value_enum, default_value_t = VariantChoice::WithRubric)]
    variant: VariantChoice,

    /// Send complete / missing_all judgments to the backend instead of
    /// the fixed endpoints.
    #[arg(long)]
    rescale_extremes: bool,

    /// Round backend scores to the nearest multiple (ties round up).
    #[arg(long)]
    quantize: Option<u32>,

    /// Maximum backend calls in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,

    /// Run identifier; defaults to a hash of the run manifest.
    #[arg(long)]
    run_id: Option<String>,

    /// Directory with custom prompt templates and label definitions.
    #[arg(long)]
    templates: Option<PathBuf>,

    /// Output scores file.
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    live: LiveArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineMethod {
    Static,
    AvgEbr,
    Msh,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,

    /// Points deducted per missing sentence (msh).
    #[arg(long, default_value_t = 16)]
    deduction: u32,

    /// Grid-search the deduction that minimizes MAE against the
    /// dataset's references (msh).
    #[arg(long)]
    optimize_deduction: bool,

    /// Previously produced rescaled scores to fit the label mapping
    /// from (avg-ebr).
    #[arg(long)]
    ebr_scores: Option<PathBuf>,

    #[arg(long)]
    run_id: Option<String>,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Score files to compare against the references; one report row
    /// per file.
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,

    /// Comma-separated slices: overall, missing_minor, missing_major,
    /// missing_all, complete.
    #[arg(long, default_value = "overall,missing_minor,missing_major", value_delimiter = ',')]
    slices: Vec<String>,

    /// Also report tau and MAE between every pair of expert columns.
    #[arg(long)]
    expert_agreement: bool,

    /// Write (label, score) points for score-distribution plots.
    #[arg(long)]
    points_out: Option<PathBuf>,

    /// Write metric records here (plus a manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgreementArgs {
    /// Score files to measure agreement over, in addition to the
    /// original labels.
    #[arg(long)]
    scores: Vec<PathBuf>,

    /// Minimum co-annotated items per annotator pair.
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    min_overlap: usize,

    /// Write agreement records here (plus a manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    rubric: PathBuf,

    #[arg(long, value_enum, default_value_t = BackendChoice::Oracle)]
    backend: BackendChoice,

    #[arg(long, value_enum, default_value_t = VariantChoice::WithRubric)]
    variant: VariantChoice,

    /// Number of rescaling runs.
    #[arg(long, default_value_t = 4)]
    runs: usize,

    #[arg(long)]
    rescale_extremes: bool,

    #[arg(long)]
    quantize: Option<u32>,

    #[arg(long, default_value_t = 4)]
    concurrency: usize,

    /// Run id prefix; per-run ids get `-1`, `-2`, ... appended.
    #[arg(long)]
    run_id: Option<String>,

    #[arg(long)]
    templates: Option<PathBuf>,

    /// Write the stability report here (plus a manifest).
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    live: LiveArgs,
}

/// Parses the command line and runs it. The thin binary calls this.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version with success and usage problems
            // with exit code 2, matching the contract.
            e.exit();
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { strict } => cmd_validate(cli, *strict),
        Command::Rescale(args) => cmd_rescale(cli, args),
        Command::Baseline(args) => cmd_baseline(cli, args),
        Command::Evaluate(args) => cmd_evaluate(cli, args),
        Command::Agreement(args) => cmd_agreement(cli, args),
        Command::Stability(args) => cmd_stability(cli, args),
        Command::CacheStats { cache_dir } => cmd_cache_stats(cli, cache_dir),
    }
}

fn data_dir(cli: &Cli) -> Result<&Path, CliError> {
    cli.data_dir
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data-dir is required for this command".into()))
}

fn load_validated_bundle(cli: &Cli) -> Result<DatasetBundle, CliError> {
    Ok(io::load_bundle(data_dir(cli)?)?)
}

fn load_templates(dir: &Option<PathBuf>) -> Result<PromptTemplates, CliError> {
    match dir {
        Some(dir) => PromptTemplates::from_dir(dir).map_err(|e| CliError::Data(e.to_string())),
        None => Ok(PromptTemplates::default()),
    }
}

fn progress(cli: &Cli, text: impl AsRef<str>) {
    if !cli.quiet {
        eprintln!("{}", text.as_ref());
    }
}

fn command_argv() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn add_bundle_inputs(manifest: &mut RunManifest, dir: &Path) -> Result<(), CliError> {
    for name in [
        io::DOCUMENTS_FILE,
        io::ITEMS_FILE,
        io::JUDGMENTS_FILE,
        io::REFERENCES_FILE,
    ] {
        let path = dir.join(name);
        if path.exists() {
            manifest.add_input_file(&path)?;
        }
    }
    Ok(())
}

fn add_template_inputs(manifest: &mut RunManifest, templates: &PromptTemplates) {
    manifest.add_input_text("rescale_with_rubric.txt", &templates.with_rubric);
    manifest.add_input_text("rescale_without_rubric.txt", &templates.without_rubric);
    manifest.add_input_text(
        "label_definitions.json",
        &serde_json::to_string(&templates.label_definitions).expect("label definitions serialize"),
    );
}

fn write_records(records: &[MetricRecord], path: &Path) -> Result<(), CliError> {
    let mut buf = String::new();
    for record in records {
        buf.push_str(&serde_json::to_string(record).expect("record serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_records(records: &[MetricRecord]) {
    for record in records {
        println!("{}", serde_json::to_string(record).expect("record serializes"));
    }
}

fn cmd_validate(cli: &Cli, strict: bool) -> Result<(), CliError> {
    let bundle = io::load_bundle_unchecked(data_dir(cli)?)?;
    let report = bundle.validate();
    if cli.json {
        println!(
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        );
    } else {
        println!("{report}");
    }
    let failed = !report.is_ok() || (strict && !report.warnings.is_empty());
    if failed {
        Err(CliError::Data("dataset validation failed".into()))
    } else {
        Ok(())
    }
}

struct PreparedRescale {
    bundle: DatasetBundle,
    rubric: Rubric,
    templates: PromptTemplates,
    policy: RescalePolicy,
}

fn prepare_rescale(
    cli: &Cli,
    rubric: &Path,
    templates: &Option<PathBuf>,
    rescale_extremes: bool,
    quantize: Option<u32>,
) -> Result<PreparedRescale, CliError> {
    let bundle = load_validated_bundle(cli)?;
    let rubric = io::load_rubric(rubric)?;
    let templates = load_templates(templates)?;
    let policy = RescalePolicy {
        rescale_extremes,
        quantize_to: quantize,
        complete_score: rubric.scale_max(),
        missing_all_score: rubric.scale_min(),
    };
    Ok(PreparedRescale {
        bundle,
        rubric,
        templates,
        policy,
    })
}

fn rescale_manifest(
    cli: &Cli,
    prepared: &PreparedRescale,
    rubric_path: &Path,
    backend_id: &str,
    variant: PromptVariant,
    concurrency: usize,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new(command_argv());
    manifest.set_config("backend", backend_id);
    manifest.set_config("variant", variant.to_string());
    manifest.set_config("policy", &prepared.policy);
    manifest.set_config("concurrency", concurrency);
    manifest.add_input_file(rubric_path)?;
    add_bundle_inputs(&mut manifest, data_dir(cli)?)?;
    add_template_inputs(&mut manifest, &prepared.templates);
    Ok(manifest)
}

fn cmd_rescale(cli: &Cli, args: &RescaleArgs) -> Result<(), CliError> {
    let prepared = prepare_rescale(
        cli,
        &args.rubric,
        &args.templates,
        args.rescale_extremes,
        args.quantize,
    )?;
    let variant: PromptVariant = args.variant.into();

    let backend: Box<dyn ScoringBackend> = match args.backend {
        BackendChoice::Oracle => Box::new(
            RubricOracleBackend::new(prepared.rubric.clone())
                .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        BackendChoice::Live => Box::new(LlmClient::new(args.live.config(
            args.concurrency,
            CacheMode::ReadWrite,
            args.live.cache_dir.clone(),
        ))?),
    };

    let mut manifest = rescale_manifest(
        cli,
        &prepared,
        &args.rubric,
        backend.id(),
        variant,
        args.concurrency,
    )?;
    let run_id = manifest.finalize_run_id(args.run_id.as_deref());

    progress(
        cli,
        format!(
            "rescaling {} judgments with backend '{}' (run {run_id})",
            prepared.bundle.judgments.len(),
            backend.id()
        ),
    );
    let outcome = rescale_bundle(
        backend.as_ref(),
        &prepared.templates,
        &prepared.bundle,
        &prepared.rubric,
        variant,
        &prepared.policy,
        &run_id,
        args.concurrency,
    );

    io::save_scores(&outcome.scores, &args.out)?;
    manifest.write_alongside(&args.out)?;
    progress(
        cli,
        format!(
            "wrote {} scores to {}",
            outcome.scores.len(),
            args.out.display()
        ),
    );

    if !outcome.failures.is_empty() {
        let sidecar = args.out.with_extension("failures.jsonl");
        let mut buf = String::new();
        for failure in &outcome.failures {
            buf.push_str(&serde_json::to_string(failure).expect("failure serializes"));
            buf.push('\n');
        }
        std::fs::write(&sidecar, buf)
            .map_err(|e| CliError::Data(format!("{}: {e}", sidecar.display())))?;
        return Err(CliError::Backend(format!(
            "{} judgment(s) failed; details in {}",
            outcome.failures.len(),
            sidecar.display()
        )));
    }
    Ok(())
}

fn cmd_baseline(cli: &Cli, args: &BaselineArgs) -> Result<(), CliError> {
    let bundle = load_validated_bundle(cli)?;
    let mut manifest = RunManifest::new(command_argv());
    add_bundle_inputs(&mut manifest, data_dir(cli)?)?;

    let scores: Vec<ScoredJudgment> = match args.method {
        BaselineMethod::Static => {
            manifest.set_config("method", "static");
            let run_id = manifest.finalize_run_id(args.run_id.as_deref());
            score_with_mapping(&bundle.judgments, &static_mapping(), Method::Static, &run_id)
        }
        BaselineMethod::Msh => {
            let deduction = if args.optimize_deduction {
                let references = bundle.references.as_deref().ok_or_else(|| {
                    CliError::Data(
                        "–-optimize-deduction needs references.jsonl in the data directory".into(),
                    )
                })?;
                let fit = optimize_msh_deduction(&bundle.judgments, references, 0..=100)?;
                progress(
                    cli,
                    format!(
                        "optimized deduction: {} (MAE {:.3} over {} judgments)",
                        fit.deduction, fit.mae, fit.n
                    ),
                );
                fit.deduction
            } else {
                args.deduction
            };
            manifest.set_config("method", "msh");
            manifest.set_config("deduction", deduction);
            let run_id = manifest.finalize_run_id(args.run_id.as_deref());
            score_with_msh(&bundle.judgments, deduction, &run_id)
        }
        BaselineMethod::AvgEbr => {
            let path = args.ebr_scores.as_ref().ok_or_else(|| {
                CliError::Usage("--method avg-ebr needs --ebr-scores <file>".into())
            })?;
            let ebr_scores = io::load_scores(path)?;
            let fit = fit_avg_ebr_mapping(&ebr_scores, &bundle.judgments)?;
            println!(
                "label mapping: missing_all={:.1} missing_major={:.1} missing_minor={:.1} complete={:.1}",
                fit.mapping.values[0], fit.mapping.values[1], fit.mapping.values[2], fit.mapping.values[3]
            );
            for (low, high) in &fit.monotonicity_violations {
                eprintln!("warning: mean for {low} exceeds mean for {high}; mapping is not label-monotone");
            }
            manifest.set_config("method", "avg_ebr");
            manifest.set_config("mapping", fit.mapping.values);
            manifest.add_input_file(path)?;
            let run_id = manifest.finalize_run_id(args.run_id.as_deref());
            score_with_mapping(&bundle.judgments, &fit.mapping, Method::AvgEbr, &run_id)
        }
    };

    io::save_scores(&scores, &args.out)?;
    manifest.write_alongside(&args.out)?;
    progress(
        cli,
        format!("wrote {} scores to {}", scores.len(), args.out.display()),
    );
    Ok(())
}

fn parse_slices(names: &[String]) -> Result<Vec<Slice>, CliError> {
    names
        .iter()
        .map(|name| {
            Slice::parse(name)
                .ok_or_else(|| CliError::Usage(format!("unknown slice '{name}'")))
        })
        .collect()
}

/// Method label for a score file: the method recorded in it when
/// uniform, otherwise the file stem.
fn method_label(path: &Path, scores: &[ScoredJudgment]) -> String {
    let mut methods: Vec<&str> = scores.iter().map(|s| s.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    match methods.as_slice() {
        [single] => (*single).to_string(),
        _ => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
    }
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), CliError> {
    let bundle = load_validated_bundle(cli)?;
    let references = bundle
        .references
        .as_deref()
        .ok_or_else(|| CliError::Data("evaluation needs references.jsonl in the data directory".into()))?;
    let slices = parse_slices(&args.slices)?;

    let mut manifest = RunManifest::new(command_argv());
    add_bundle_inputs(&mut manifest, data_dir(cli)?)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut records: Vec<MetricRecord> = Vec::new();
    let mut all_points = Vec::new();

    for path in &args.scores {
        let scores = io::load_scores(path)?;
        manifest.add_input_file(path)?;
        let method = method_label(path, &scores);
        let report = evaluate_against_reference(
            &method,
            &scores,
            references,
            &bundle.judgments,
            &slices,
        )?;
        records.extend(eval_report_records(&report));
        reports.push(report);
        if args.points_out.is_some() {
            all_points.extend(score_points(&scores, &bundle.judgments));
        }
    }

    if args.expert_agreement {
        let pair_reports = expert_agreement(references, &bundle.judgments, &slices)?;
        for pair in &pair_reports {
            for slice in &pair.slices {
                let (value, p_value) = match slice.tau.defined() {
                    Some((tau, p)) => (Some(tau), Some(p)),
                    None => (None, None),
                };
                records.push(MetricRecord {
                    metric: format!("expert_{}_{}_tau", pair.experts.0, pair.experts.1),
                    slice: slice.slice.clone(),
                    value,
                    p_value,
                    n: slice.n,
                });
                records.push(MetricRecord {
                    metric: format!("expert_{}_{}_mae", pair.experts.0, pair.experts.1),
                    slice: slice.slice.clone(),
                    value: Some(slice.mae),
                    p_value: None,
                    n: slice.n,
                });
            }
            if !cli.json {
                let cells: Vec<String> = pair
                    .slices
                    .iter()
                    .map(|s| format!("{}: tau {} mae {:.2}", s.slice, s.tau.render(), s.mae))
                    .collect();
                println!(
                    "experts ({}, {})  {}",
                    pair.experts.0,
                    pair.experts.1,
                    cells.join("  ")
                );
            }
        }
    }

    if cli.json {
        print_records(&records);
    } else {
        print!("{}", render_eval_table(&reports));
    }

    if let Some(points_out) = &args.points_out {
        let mut buf = String::new();
        for point in &all_points {
            buf.push_str(&serde_json::to_string(point).expect("point serializes"));
            buf.push('\n');
        }
        std::fs::write(points_out, buf)
            .map_err(|e| CliError::Data(format!("{}: {e}", points_out.display())))?;
        progress(cli, format!("wrote score points to {}", points_out.display()));
    }

    if let Some(out) = &args.out {
        manifest.finalize_run_id(None);
        write_records(&records, out)?;
        manifest.write_alongside(out)?;
        progress(cli, format!("wrote metric records to {}", out.display()));
    }
    Ok(())
}

fn cmd_agreement(cli: &Cli, args: &AgreementArgs) -> Result<(), CliError> {
    let bundle = load_validated_bundle(cli)?;
    let mut manifest = RunManifest::new(command_argv());
    add_bundle_inputs(&mut manifest, data_dir(cli)?)?;
    manifest.set_config("min_overlap", args.min_overlap);

    let mut records: Vec<MetricRecord> = Vec::new();
    let mut table = vec![vec!["variation".to_string(), "tau".to_string(), "pairs".to_string()]];

    let labels_map = label_ranks_by_annotator(&bundle.judgments);
    let pre = pairwise_aggregate_tau(&labels_map, args.min_overlap)?;
    records.push(MetricRecord {
        metric: "aggregate_tau".into(),
        slice: "original_labels".into(),
        value: Some(pre.aggregate),
        p_value: None,
        n: pre.included,
    });
    table.push(vec![
        "original_labels".into(),
        format!("{:.2}", pre.aggregate),
        pre.included.to_string(),
    ]);

    for path in &args.scores {
        let scores = io::load_scores(path)?;
        manifest.add_input_file(path)?;
        let name = method_label(path, &scores);
        let score_map = scores_by_annotator(
            scores
                .iter()
                .map(|s| (s.annotator.as_str(), s.item_id.as_str(), s.score)),
        );
        let aggregate = pairwise_aggregate_tau(&score_map, args.min_overlap)?;
        records.push(MetricRecord {
            metric: "aggregate_tau".into(),
            slice: name.clone(),
            value: Some(aggregate.aggregate),
            p_value: None,
            n: aggregate.included,
        });
        table.push(vec![
            name.clone(),
            format!("{:.2}", aggregate.aggregate),
            aggregate.included.to_string(),
        ]);

        // When the score file covers exactly the judged pairs, report
        // the pre/post shift as well.
        if let Ok(shift) = agreement_shift(&bundle.judgments, &scores, args.min_overlap) {
            records.push(MetricRecord {
                metric: "aggregate_tau_shift".into(),
                slice: name,
                value: Some(shift.post.aggregate - shift.pre.aggregate),
                p_value: None,
                n: shift.post.included,
            });
        }
    }

    if cli.json {
        print_records(&records);
    } else {
        let rows: Vec<Vec<String>> = table;
        let mut widths = vec![0usize; rows[0].len()];
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, cell)| format!("{cell:<width$}", width = widths[i]))
                .collect();
            println!("{}", line.join("  ").trim_end());
        }
    }

    if let Some(out) = &args.out {
        manifest.finalize_run_id(None);
        write_records(&records, out)?;
        manifest.write_alongside(out)?;
    }
    Ok(())
}

fn cmd_stability(cli: &Cli, args: &StabilityArgs) -> Result<(), CliError> {
    let prepared = prepare_rescale(
        cli,
        &args.rubric,
        &args.templates,
        args.rescale_extremes,
        args.quantize,
    )?;
    let variant: PromptVariant = args.variant.into();

    let backend_name = match args.backend {
        BackendChoice::Oracle => "oracle".to_string(),
        BackendChoice::Live => args.live.model.clone(),
    };
    let mut manifest = rescale_manifest(
        cli,
        &prepared,
        &args.rubric,
        &backend_name,
        variant,
        args.concurrency,
    )?;
    manifest.set_config("runs", args.runs);
    let run_prefix = manifest.finalize_run_id(args.run_id.as_deref());

    let rubric = prepared.rubric.clone();
    let live = &args.live;
    let concurrency = args.concurrency;
    let backend_kind = args.backend;
    let run_prefix_for_factory = run_prefix.clone();
    let backend_for_run = move |run: usize| -> Result<Box<dyn ScoringBackend>, String> {
        match backend_kind {
            BackendChoice::Oracle => RubricOracleBackend::new(rubric.clone())
                .map(|b| Box::new(b) as Box<dyn ScoringBackend>)
                .map_err(|e| e.to_string()),
            BackendChoice::Live => {
                // Stability is meaningless against a read-through cache:
                // bypass reads, but keep a run-scoped cache for audit.
                let cache_dir = live
                    .cache_dir
                    .join(format!("{run_prefix_for_factory}-{run}"));
                LlmClient::new(live.config(concurrency, CacheMode::WriteOnly, cache_dir))
                    .map(|b| Box::new(b) as Box<dyn ScoringBackend>)
                    .map_err(|e| e.to_string())
            }
        }
    };

    progress(
        cli,
        format!(
            "running {} rescaling pass(es) over {} judgments",
            args.runs,
            prepared.bundle.judgments.len()
        ),
    );
    let report = report::stability_run(
        &backend_for_run,
        &prepared.templates,
        &prepared.bundle,
        &prepared.rubric,
        variant,
        &prepared.policy,
        args.runs,
        &run_prefix,
        args.concurrency,
    )?;

    if cli.json {
        println!(
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        );
    } else {
        print!("{}", render_stability_table(&report));
    }

    if let Some(out) = &args.out {
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        std::fs::write(out, text).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        manifest.write_alongside(out)?;
    }

    let total_failures: usize = report.runs.iter().map(|r| r.failures).sum();
    if total_failures > 0 {
        return Err(CliError::Backend(format!(
            "{total_failures} judgment(s) failed across runs"
        )));
    }
    Ok(())
}

fn cmd_cache_stats(cli: &Cli, cache_dir: &Path) -> Result<(), CliError> {
    let stats = llm::cache_stats(cache_dir)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string(&stats).expect("stats serialize")
        );
    } else {
        println!("entries: {}", stats.entries);
        println!("bytes:   {}", stats.bytes);
        println!("hits:    {} (this session)", stats.hits);
        println!("misses:  {} (this session)", stats.misses);
    }
    Ok(())
}
