use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kbwalk::kb::{build_node_groups, ingest_corpus, IngestConfig, KbError, KnowledgeIndex};
use kbwalk::metrics::{alignment_score, diversity_report, AlignmentInput, AlignmentReport, DiversityReport, MetricsError};
use kbwalk::pipeline::{read_conversations, run_batch, ConfigError, PipelineConfig, Providers, ResultRecord};
use kbwalk::providers::ProviderError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "kbwalk", version, about = "Reasoning-aware knowledge retrieval")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a TSV corpus, cluster its concepts and write an index snapshot.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_rows: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Retrieve knowledge for every conversation in a JSONL file.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        conversation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a results file for diversity and alignment.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config; defaults are used when neither this nor KBWALK_CONFIG is set.
    #[arg(long, env = "KBWALK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    simulations: Option<usize>,
    #[arg(long)]
    context_window: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load_unvalidated(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.simulations {
            config.search.simulations = n;
        }
        if let Some(w) = self.context_window {
            config.context_window = w;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Input { path: PathBuf, line: usize, message: String },
    #[error("{failed} of {total} conversations failed")]
    Partial { failed: usize, total: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn index(corpus: &Path, out: &Path, max_rows: Option<usize>, config: &PipelineConfig) -> Result<(), CliError> {
    let (index, report) = ingest_corpus(corpus, &IngestConfig { max_rows })?;
    let providers = Providers::from_config(config)?;
    let index = build_node_groups(index, providers.embedder.as_ref(), config.bridging.cluster_threshold)?;
    index.save(out)?;
    println!(
        "rows {} accepted {} duplicates {} skipped {} sentences {} concepts {} groups {}",
        report.rows_read,
        report.accepted,
        report.duplicates,
        report.skipped,
        index.sentences().len(),
        index.concepts().len(),
        index.groups().len()
    );
    Ok(())
}

fn query(index: &Path, conversation: &Path, out: &Path, config: &PipelineConfig) -> Result<(), CliError> {
    let index = KnowledgeIndex::load(index)?;
    let conversations = read_conversations(open(conversation)?).map_err(|(line, message)| CliError::Input {
        path: conversation.to_owned(),
        line,
        message,
    })?;
    let providers = Providers::from_config(config)?;
    let outputs = run_batch(&conversations, &index, &providers, config);
    let mut w = BufWriter::new(File::create(out).map_err(io_err(out))?);
    let mut failed = 0;
    for output in &outputs {
        match output {
            Ok(o) => o.write_jsonl(&index, &mut w).map_err(io_err(out))?,
            Err(e) => {
                log::error!("{e}");
                failed += 1;
            }
        }
    }
    w.flush().map_err(io_err(out))?;
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: outputs.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TextLine {
    conversation_id: String,
    text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Input {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn grouped(path: &Path) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in read_jsonl::<TextLine>(path)? {
        map.entry(line.conversation_id).or_default().push(line.text);
    }
    Ok(map)
}

#[derive(Debug, Serialize)]
struct ConversationEval {
    conversation_id: String,
    diversity: DiversityReport,
    alignment: Option<AlignmentReport>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    theta: f64,
    /// Field-wise mean of the per-conversation reports.
    diversity: DiversityReport,
    alignment_mean: Option<f64>,
    alignment_scored: usize,
    conversations: Vec<ConversationEval>,
}

fn eval(
    results: &Path,
    transitions: &Path,
    events: &Path,
    theta: f64,
    config: &PipelineConfig,
) -> Result<EvalReport, CliError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(MetricsError::BadTheta(theta).into());
    }
    let mut knowledge: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for record in read_jsonl::<ResultRecord>(results)? {
        let texts = knowledge.entry(record.conversation_id).or_default();
        for k in record.knowledge {
            if !texts.contains(&k.text) {
                texts.push(k.text);
            }
        }
    }
    let transitions = grouped(transitions)?;
    let events = grouped(events)?;
    let providers = Providers::from_config(config)?;

    let mut conversations = Vec::new();
    for (id, retrieved) in knowledge {
        let diversity = diversity_report(&retrieved, providers.embedder.as_ref())?;
        let alignment = match (transitions.get(&id), events.get(&id)) {
            (Some(t), Some(e)) => {
                let input = AlignmentInput {
                    retrieved,
                    transitions: t.clone(),
                    events: e.clone(),
                };
                Some(alignment_score(&input, theta, providers.entailer.as_ref())?)
            }
            _ => {
                log::warn!("conversation {id}: no transitions or events, alignment skipped");
                None
            }
        };
        conversations.push(ConversationEval {
            conversation_id: id,
            diversity,
            alignment,
        });
    }

    let n = conversations.len().max(1) as f64;
    let mut diversity = DiversityReport::default();
    for c in &conversations {
        let d = &c.diversity;
        diversity.rouge1 += d.rouge1 / n;
        diversity.rouge2 += d.rouge2 / n;
        diversity.rouge_l += d.rouge_l / n;
        diversity.semantic_precision += d.semantic_precision / n;
        diversity.semantic_recall += d.semantic_recall / n;
        diversity.semantic_f1 += d.semantic_f1 / n;
        diversity.n_pairs += d.n_pairs;
    }
    let scores: Vec<f64> = conversations.iter().filter_map(|c| c.alignment.as_ref().map(|a| a.score)).collect();
    Ok(EvalReport {
        theta,
        diversity,
        alignment_mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        alignment_scored: scores.len(),
        conversations,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index {
            corpus,
            out,
            max_rows,
            config,
        } => index(&corpus, &out, max_rows, &config.resolve()?),
        Command::Query {
            index,
            conversation,
            out,
            config,
        } => query(&index, &conversation, &out, &config.resolve()?),
        Command::Eval {
            results,
            transitions,
            events,
            theta,
            config,
        } => {
            let report = eval(&results, &transitions, &events, theta, &config.resolve()?)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &report).map_err(|e| CliError::Io {
                path: "<stdout>".into(),
                source: e.into(),
            })?;
            writeln!(lock).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
