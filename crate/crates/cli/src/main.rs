use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use corpusforge::config::PipelineConfig;
use corpusforge::export::PackMode;
use corpusforge::metrics::{classification_report, ner_report, read_conll, read_labels, read_tag_jsonl};
use corpusforge::pipeline::{report_table, run_pipeline, CorpusStats, Layout, Stage, TableFormat};
use corpusforge::schedule::{
    long_sequence_share, parse_table, phase_rows, printed_examples, shipped_table, validate_against_table,
    ModelVersion, Schedule, TableColumn,
};

#[derive(Parser)]
#[command(name = "corpusforge", version, about = "Build a filtered, deduplicated pre-training corpus from OCR archives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse every manifest entry (ALTO, METS or plain text).
    Ingest(StageArgs),
    /// Apply confidence, word-count and period rules.
    Filter(StageArgs),
    /// Normalize paragraph text.
    Clean(StageArgs),
    /// Remove duplicated paragraphs across the collection.
    Dedup(StageArgs),
    /// Classify paragraph languages and report the mix.
    Lang(StageArgs),
    /// Tokenize and write masked pre-training examples.
    Export(ExportArgs),
    /// Compute corpus statistics and print the composition table.
    Stats(StatsArgs),
    /// Run the selected stages in order, resuming from checkpoints.
    Run(RunArgs),
    /// Print a pre-training schedule, its LR curve or its validation report.
    PlanSchedule(ScheduleArgs),
    /// Score predictions against gold labels.
    Score(ScoreArgs),
}

#[derive(Args, Clone)]
struct StageArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `shard_count` from the config.
    #[arg(long)]
    shard_count: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Sequence lengths to emit (repeatable; 128 and/or 512).
    #[arg(long = "seq-len")]
    seq_lens: Vec<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PackMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long, value_parser = parse_table_format, default_value = "text")]
    format: TableFormat,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Comma-separated subset of ingest,filter,clean,dedup,lang,export,stats.
    #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
    stages: Vec<Stage>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Csv,
    Json,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, value_parser = parse_version)]
    version: ModelVersion,
    #[arg(long, value_enum, default_value = "csv")]
    emit: Emit,
    /// Emit the learning rate every N steps instead of one row per phase.
    #[arg(long)]
    stride: Option<u64>,
    /// Print the example-count validation report (JSON) instead of a table.
    #[arg(long)]
    validate: bool,
    /// Alternative table transcription (tab-separated, same columns as the shipped one).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    /// Entity-level micro F1 over IOB2 tags.
    Ner,
    /// Macro F1 over one label per line.
    Cls,
}

#[derive(Clone, Copy, ValueEnum)]
enum TagFormat {
    Conll,
    Jsonl,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(value_enum)]
    task: Task,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Input format for `ner`; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<TagFormat>,
}

fn parse_mode(s: &str) -> Result<PackMode, String> {
    s.parse()
}
fn parse_table_format(s: &str) -> Result<TableFormat, String> {
    s.parse()
}
fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}
fn parse_version(s: &str) -> Result<ModelVersion, String> {
    s.parse()
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => single_stage(&a, Stage::Ingest, |_| {}),
        Command::Filter(a) => single_stage(&a, Stage::Filter, |_| {}),
        Command::Clean(a) => single_stage(&a, Stage::Clean, |_| {}),
        Command::Dedup(a) => single_stage(&a, Stage::Dedup, |_| {}),
        Command::Lang(a) => single_stage(&a, Stage::Lang, |_| {}),
        Command::Export(a) => single_stage(&a.stage, Stage::Export, |cfg| {
            if !a.seq_lens.is_empty() {
                cfg.export.seq_lens = a.seq_lens.clone();
            }
            if let Some(m) = a.mode {
                cfg.export.mode = m;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(v) = &a.vocab {
                cfg.vocab = Some(v.clone());
            }
        }),
        Command::Stats(a) => {
            let cfg = load_config(&a.stage, |c| c.stages = vec![Stage::Stats])?;
            let report = run_pipeline(&cfg)?;
            let stats: CorpusStats = report.stats.context("stats stage produced no report")?;
            print!("{}", report_table(&stats, a.format));
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(a) => {
            let cfg = load_config(&a.stage, |c| {
                if !a.stages.is_empty() {
                    c.stages = a.stages.clone();
                }
                if let Some(s) = a.seed {
                    c.seed = s;
                }
            })?;
            let report = run_pipeline(&cfg)?;
            for s in &report.executed {
                eprintln!("{s}: done");
            }
            for s in &report.skipped {
                eprintln!("{s}: up to date, skipped");
            }
            if let Some(stats) = report.stats {
                print!("{}", report_table(&stats, TableFormat::Text));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::PlanSchedule(a) => plan_schedule(&a),
        Command::Score(a) => score(&a),
    }
}

fn load_config(a: &StageArgs, tweak: impl FnOnce(&mut PipelineConfig)) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(o) = &a.output_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(n) = a.shard_count {
        cfg.shard_count = n;
    }
    tweak(&mut cfg);
    Ok(cfg)
}

fn single_stage(a: &StageArgs, stage: Stage, tweak: impl FnOnce(&mut PipelineConfig)) -> Result<ExitCode> {
    let cfg = load_config(a, |c| {
        c.stages = vec![stage];
        tweak(c);
    })?;
    let report = run_pipeline(&cfg)?;
    let state = if report.executed.contains(&stage) { "done" } else { "up to date, skipped" };
    eprintln!("{stage}: {state}");
    let cp = Layout::new(&cfg.output_dir).checkpoint(stage);
    let text = std::fs::read_to_string(&cp).with_context(|| format!("reading {}", cp.display()))?;
    let cp: serde_json::Value = serde_json::from_str(&text)?;
    println!("{}", serde_json::to_string_pretty(&cp["summary"])?);
    Ok(ExitCode::SUCCESS)
}

fn load_table(path: Option<&Path>) -> Result<Vec<TableColumn>> {
    match path {
        None => Ok(shipped_table().to_vec()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(parse_table(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
    }
}

fn plan_schedule(a: &ScheduleArgs) -> Result<ExitCode> {
    let table = load_table(a.table.as_deref())?;
    let schedule = Schedule::from_table(a.version, &table)?;
    let out = std::io::stdout();
    let mut out = out.lock();
    if a.validate {
        let report = validate_against_table(&schedule, &printed_examples(&table));
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        return Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    match (a.emit, a.stride) {
        (Emit::Csv, Some(stride)) => {
            writeln!(out, "step,lr")?;
            for (step, lr) in schedule.lr_curve(stride) {
                writeln!(out, "{step},{lr:e}")?;
            }
        }
        (Emit::Json, Some(stride)) => {
            let curve: Vec<_> = schedule
                .lr_curve(stride)
                .into_iter()
                .map(|(step, lr)| serde_json::json!({ "step": step, "lr": lr }))
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&curve)?)?;
        }
        (Emit::Csv, None) => {
            writeln!(out, "phase,start_step,end_step,steps,batch_size,seq_len,examples,lr_start,lr_end,lr_shape")?;
            for r in phase_rows(&schedule) {
                let shape = serde_json::to_value(r.lr_shape)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{:e},{:e},{}",
                    r.name,
                    r.start_step,
                    r.end_step,
                    r.steps,
                    r.batch_size,
                    r.seq_len,
                    r.examples,
                    r.lr_start,
                    r.lr_end,
                    shape.as_str().unwrap_or_default()
                )?;
            }
        }
        (Emit::Json, None) => {
            let value = serde_json::json!({
                "version": a.version.to_string(),
                "total_steps": schedule.total_steps(),
                "phases": phase_rows(&schedule),
                "long_sequence_share": long_sequence_share(&schedule),
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn score(a: &ScoreArgs) -> Result<ExitCode> {
    let value = match a.task {
        Task::Ner => {
            let format = a.format.unwrap_or_else(|| {
                match a.gold.extension().and_then(|e| e.to_str()) {
                    Some("jsonl") | Some("json") => TagFormat::Jsonl,
                    _ => TagFormat::Conll,
                }
            });
            let read = |p: &Path| -> Result<_> {
                match format {
                    TagFormat::Conll => read_conll(open(p)?),
                    TagFormat::Jsonl => read_tag_jsonl(open(p)?),
                }
                .with_context(|| format!("reading {}", p.display()))
            };
            let (gold, pred) = (read(&a.gold)?, read(&a.pred)?);
            serde_json::to_value(ner_report(&gold, &pred)?)?
        }
        Task::Cls => {
            if a.format.is_some() {
                bail!("--format applies to ner only");
            }
            let gold = read_labels(open(&a.gold)?).with_context(|| format!("reading {}", a.gold.display()))?;
            let pred = read_labels(open(&a.pred)?).with_context(|| format!("reading {}", a.pred.display()))?;
            serde_json::to_value(classification_report(&gold, &pred)?)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(ExitCode::SUCCESS)
}
