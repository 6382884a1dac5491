use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use mcqgen::config::RunConfig;
use mcqgen::dataset::{read_mcq_dataset, write_mcq_dataset};
use mcqgen::eval::{
    evaluate_files, human_eval_summary, ingest_annotations, render_human_eval, render_tables, MetricsReport, TableStyle,
};
use mcqgen::kg::{filtered_mrr, train_with_history, TripleStore};
use mcqgen::pipeline::{generate, manifest_path};
use mcqgen::taxonomy::{categorize_items, distribution_report};
use mcqgen::{Error, ErrorClass, McqItem};

/// Multiple-choice question generation and LLM evaluation.
#[derive(Parser)]
#[command(name = "mcqgen", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for KG training and choice shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Abort on the first failing item.
    #[arg(long, global = true)]
    fail_fast: bool,
    /// Write per-candidate audit lines here.
    #[arg(long, global = true)]
    audit_log: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// QA records in, MCQ items out.
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write items with fewer distractors than configured.
        #[arg(long)]
        keep_incomplete: bool,
        /// Use the questions present in the input records.
        #[arg(long)]
        bypass_question_gen: bool,
    },
    /// Train ComplEx embeddings on a triple file.
    TrainKg {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Label items by question type and, with an LLM configured, content.
    Categorize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write the label distribution here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score eval logs against an item dataset.
    Evaluate {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Machine-readable report (JSON).
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Render tables from a saved evaluation, annotations or a dataset.
    Report {
        /// JSON report written by `evaluate`.
        #[arg(long)]
        evaluation: Option<PathBuf>,
        /// Human annotation lines.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// MCQ dataset to summarize by label.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        render: RenderArgs,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_enum, default_value = "plain")]
    style: Style,
    /// Also write the rendered tables here.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Plain,
    Tsv,
    Csv,
}

impl From<Style> for TableStyle {
    fn from(s: Style) -> Self {
        match s {
            Style::Plain => TableStyle::Plain,
            Style::Tsv => TableStyle::Delimited('\t'),
            Style::Csv => TableStyle::Delimited(','),
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RunReport {
    label: String,
    report: MetricsReport,
}

fn load_config(cli: &Cli) -> mcqgen::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w.max(1);
    }
    if cli.fail_fast {
        cfg.run.fail_fast = true;
    }
    if let Some(p) = &cli.audit_log {
        cfg.run.audit_log = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> mcqgen::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> mcqgen::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    write_text(path, &(text + "\n"))
}

fn emit(text: &str, render: &RenderArgs) -> mcqgen::Result<()> {
    print!("{text}");
    if let Some(path) = &render.tables {
        write_text(path, text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> mcqgen::Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate {
            input,
            output,
            keep_incomplete,
            bypass_question_gen,
        } => {
            cfg.run.keep_incomplete |= keep_incomplete;
            cfg.qgen.bypass |= bypass_question_gen;
            let manifest = generate(&cfg, &input, &output)?;
            println!(
                "{} records, {} items written, {} incomplete dropped, {} failed; manifest {}",
                manifest.records_in,
                manifest.items_written,
                manifest.items_incomplete_dropped,
                manifest.items_failed,
                manifest_path(&output).display()
            );
        }
        Command::TrainKg {
            triples,
            output,
            epochs,
            dim,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(d) = dim {
                cfg.train.dim = d;
            }
            cfg.train.validate()?;
            let store = TripleStore::load(&triples)?;
            let report = train_with_history(&store, &cfg.train)?;
            report.embedding.save(&output)?;
            let mrr = filtered_mrr(&store, &report.embedding, store.triples());
            if let Some(loss) = report.epoch_losses.last() {
                info!("final epoch mean loss {loss:.6}");
            }
            println!(
                "{} entities, {} relations, {} triples; filtered MRR {mrr:.4}; wrote {}",
                store.num_entities(),
                store.num_relations(),
                store.triples().len(),
                output.display()
            );
        }
        Command::Categorize { input, output, report } => {
            let mut items: Vec<McqItem> = read_mcq_dataset(&input)?;
            let lexicon = cfg.question_lexicon()?;
            let template = cfg.prompt_template()?;
            let client = cfg.llm_client()?;
            if client.is_none() {
                info!("no LLM client configured; content labels left unchanged");
            }
            let errors = categorize_items(
                &mut items,
                &lexicon,
                client.as_deref(),
                &template,
                &cfg.backend.retry(),
                cfg.categorize.max_in_flight.max(1),
            );
            for (id, e) in &errors {
                warn!("item {id}: content set to OTHERS after {e}");
            }
            write_mcq_dataset(&items, &output)?;
            let dist = distribution_report(&items);
            print!("{}", dist.render());
            if let Some(path) = report {
                write_json(&path, &dist)?;
            }
        }
        Command::Evaluate {
            logs,
            dataset,
            output,
            render,
        } => {
            let reports = evaluate_files(&logs, &dataset)?;
            let runs: Vec<RunReport> = reports
                .iter()
                .map(|(label, report)| RunReport {
                    label: label.clone(),
                    report: report.clone(),
                })
                .collect();
            write_json(&output, &runs)?;
            emit(&render_tables(&reports, render.style.into()), &render)?;
        }
        Command::Report {
            evaluation,
            annotations,
            dataset,
            render,
        } => {
            if evaluation.is_none() && annotations.is_none() && dataset.is_none() {
                return Err(Error::Config(
                    "report needs --evaluation, --annotations or --dataset".into(),
                ));
            }
            let style: TableStyle = render.style.into();
            let mut text = String::new();
            if let Some(path) = evaluation {
                let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let runs: Vec<RunReport> = serde_json::from_str(&raw).map_err(|e| Error::MalformedLine {
                    line: e.line(),
                    detail: e.to_string(),
                })?;
                let reports: Vec<(String, MetricsReport)> = runs.into_iter().map(|r| (r.label, r.report)).collect();
                text.push_str(&render_tables(&reports, style));
            }
            if let Some(path) = annotations {
                let summary = human_eval_summary(&ingest_annotations(&path)?)?;
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&render_human_eval(&summary, style));
            }
            if let Some(path) = dataset {
                let items = read_mcq_dataset(&path)?;
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&distribution_report(&items).render());
            }
            emit(&text, &render)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Backend => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
