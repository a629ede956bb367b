use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use stategraph_rca::config::{BackendConfig, Config};
use stategraph_rca::driver::{
    load_corpus, prepare_graphs, run_eval, run_rca, run_rca_with, EvalMode, RcaContext, StdinReviewer,
};
use stategraph_rca::entity::EntityRef;
use stategraph_rca::ingest::load_snapshot_stream;
use stategraph_rca::metagraph::{MetaGraph, Metapath};
use stategraph_rca::query::emit_cypher;
use stategraph_rca::stategraph::StateGraph;
use stategraph_rca::synthetic::synthetic_cluster;
use stategraph_rca::time::parse_timestamp;
use stategraph_rca::{Incident, RcaStatus};

#[derive(Parser)]
#[command(
    name = "stategraph-rca",
    version,
    about = "Root-cause analysis over Kubernetes state graphs"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `stategraph_rca=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a StateGraph from newline-delimited snapshots.
    BuildGraph {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive the MetaGraph of a serialized StateGraph.
    Metagraph {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write Graphviz DOT next to the JSON.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Analyse one incident.
    Rca {
        #[command(flatten)]
        source: GraphSource,
        /// Incident JSON file with message, namespace and timestamp.
        #[arg(long, conflicts_with_all = ["message", "namespace", "time"])]
        incident: Option<PathBuf>,
        #[arg(long, required_unless_present = "incident")]
        message: Option<String>,
        #[arg(long, required_unless_present = "incident")]
        namespace: Option<String>,
        /// RFC 3339 incident time.
        #[arg(long, required_unless_present = "incident")]
        time: Option<String>,
        /// `oracle`, `http` or `mock:<responses.json>`.
        #[arg(long)]
        backend: Option<String>,
        /// Directory for report.md and report.json; stdout when omitted.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Ask on stdin whether each report explains the incident.
        #[arg(long)]
        interactive: bool,
    },
    /// Evaluate a labeled incident corpus.
    Eval {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "retrieval")]
        mode: Mode,
        #[arg(long)]
        backend: Option<String>,
        /// Write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write Cypher for a whole graph or for one extended metapath.
    ExportCypher {
        #[arg(long, required_unless_present = "metapath")]
        graph: Option<PathBuf>,
        /// Extended metapath listing file.
        #[arg(long, requires = "event_uid")]
        metapath: Option<PathBuf>,
        /// Uid of the anchoring Event.
        #[arg(long)]
        event_uid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the built-in synthetic snapshots and labeled corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct GraphSource {
    /// Serialized StateGraph from `build-graph`.
    #[arg(long, conflicts_with = "snapshots", required_unless_present = "snapshots")]
    graph: Option<PathBuf>,
    /// Raw snapshots; the graph is built on the fly.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Retrieval,
    Report,
}

type Fallible<T> = Result<T, Box<dyn std::error::Error>>;

fn read(path: &Path) -> Fallible<String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, text: &str) -> Fallible<()> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn emit(out: Option<&Path>, text: &str) -> Fallible<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn external_kinds(config: &Config) -> Vec<String> {
    config
        .catalog
        .external_kinds
        .iter()
        .map(|k| k.kind.clone())
        .collect()
}

fn load_graphs(source: &GraphSource, config: &Config) -> Fallible<(StateGraph, MetaGraph)> {
    let graph = match (&source.graph, &source.snapshots) {
        (Some(g), _) => StateGraph::from_json(&read(g)?)?,
        (None, Some(s)) => {
            let stream = load_snapshot_stream(s)?;
            prepare_graphs(&stream.records, config)?.graph
        }
        (None, None) => return Err("either --graph or --snapshots is required".into()),
    };
    let meta = MetaGraph::from_state_graph(&graph, external_kinds(config))?;
    Ok((graph, meta))
}

fn backend_config(spec: Option<&str>, config: &Config) -> Fallible<BackendConfig> {
    Ok(match spec {
        Some(s) => BackendConfig::from_spec(s, &config.backend)?,
        None => config.backend.clone(),
    })
}

fn run(cli: Cli) -> Fallible<ExitCode> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::BuildGraph { snapshots, out } => {
            let stream = load_snapshot_stream(&snapshots)?;
            if stream.skipped_count() > 0 {
                eprintln!("skipped {} malformed line(s)", stream.skipped_count());
            }
            let prepared = prepare_graphs(&stream.records, &config)?;
            write(&out, &prepared.graph.to_json())?;
            eprintln!(
                "{} records -> {} deduplicated snapshots -> {} vertices, {} edges",
                stream.records.len(),
                prepared.deduped.len(),
                prepared.graph.vertex_count(),
                prepared.graph.edge_count()
            );
        }
        Command::Metagraph { graph, out, dot } => {
            let graph = StateGraph::from_json(&read(&graph)?)?;
            let meta = MetaGraph::from_state_graph(&graph, external_kinds(&config))?;
            let json = serde_json::to_string_pretty(&meta)? + "\n";
            emit(out.as_deref(), &json)?;
            if let Some(d) = dot {
                write(&d, &meta.to_dot())?;
            }
        }
        Command::Rca {
            source,
            incident,
            message,
            namespace,
            time,
            backend,
            out_dir,
            interactive,
        } => {
            let (graph, meta) = load_graphs(&source, &config)?;
            let incident: Incident = match incident {
                Some(p) => serde_json::from_str(&read(&p)?)?,
                None => Incident::new(
                    message.unwrap_or_default(),
                    namespace.unwrap_or_default(),
                    parse_timestamp(time.as_deref().unwrap_or_default())?,
                ),
            };
            let backend = backend_config(backend.as_deref(), &config)?.build()?;
            let prompts = config.prompts.load()?;
            let ctx = RcaContext {
                graph: &graph,
                meta: &meta,
                knowledge: &config.knowledge,
                prompts: &prompts,
                config: &config.rca,
            };
            let result = if interactive {
                let stdin = std::io::stdin();
                let mut reviewer = StdinReviewer::new(stdin.lock(), std::io::stderr());
                run_rca_with(&incident, &ctx, backend, &mut reviewer)
            } else {
                run_rca(&incident, &ctx, backend)
            };
            match out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write(&dir.join("report.md"), &result.to_markdown())?;
                    write(&dir.join("report.json"), &(result.to_json() + "\n"))?;
                    eprintln!("status {}; report written to {}", result.status, dir.display());
                }
                None => print!("{}", result.to_markdown()),
            }
            if result.status != RcaStatus::Explained {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Eval {
            source,
            corpus,
            mode,
            backend,
            json,
        } => {
            let (graph, meta) = load_graphs(&source, &config)?;
            let (rows, skipped) = load_corpus(&corpus)?;
            let backend = backend_config(backend.as_deref(), &config)?.build()?;
            let prompts = config.prompts.load()?;
            let ctx = RcaContext {
                graph: &graph,
                meta: &meta,
                knowledge: &config.knowledge,
                prompts: &prompts,
                config: &config.rca,
            };
            let mode = match mode {
                Mode::Retrieval => EvalMode::Retrieval,
                Mode::Report => EvalMode::Report,
            };
            let mut report = run_eval(&rows, &ctx, backend, mode);
            report.skipped_rows = skipped.len();
            print!("{}", report.to_markdown());
            if let Some(p) = json {
                write(&p, &(report.to_json() + "\n"))?;
            }
        }
        Command::ExportCypher {
            graph,
            metapath,
            event_uid,
            out,
        } => {
            let text = match (metapath, event_uid) {
                (Some(p), Some(uid)) => {
                    let path = Metapath::parse_listing(&read(&p)?)?;
                    emit_cypher(&path, &EntityRef::uid("Event", uid))?
                }
                _ => {
                    let g = graph.ok_or("--graph is required without --metapath")?;
                    StateGraph::from_json(&read(&g)?)?.to_cypher()
                }
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Synth { out_dir } => {
            let corpus = synthetic_cluster();
            std::fs::create_dir_all(&out_dir)?;
            write(&out_dir.join("snapshots.jsonl"), &corpus.records_jsonl())?;
            write(&out_dir.join("corpus.jsonl"), &corpus.corpus_jsonl())?;
            eprintln!(
                "wrote {} snapshots and {} incidents to {}",
                corpus.records.len(),
                corpus.incidents.len(),
                out_dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
