//! Command-line surface. Every subcommand is a thin wrapper; errors print
//! to stderr and exit 1, usage errors exit 2.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use bess_agents::knowledge::{load_corpus, KnowledgeIndex};
use bess_agents::Orchestrator;
use bess_core::ingest::{self, OperationSegment};
use bess_core::pipeline::{build_records_from_dir, evaluate_operations};
use bess_core::records::RecordStore;
use bess_core::select::decide_all;
use bess_core::synth::{self, DatasetSpec};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::api::{self, AppState};
use crate::config::{Config, Provider};

#[derive(Debug, Parser)]
#[command(name = "bess-om", version, about = "Battery pack inconsistency evaluation and O&M question answering")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true, env = "BESS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Record store directory (overrides store_dir).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Knowledge index directory or file (overrides index_path).
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Chat model provider (overrides llm.provider).
    #[arg(long, global = true, value_enum)]
    pub llm: Option<ProviderArg>,
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ProviderArg {
    Mock,
    Http,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and clean a directory of per-pack CSV files; print a summary.
    Ingest(InputArgs),
    /// List operations and whether each one is standard.
    SelectOps(InputArgs),
    /// Evaluate every standard operation; JSON to stdout.
    Evaluate(InputArgs),
    /// Run the whole pipeline and write the record store.
    BuildRecords {
        #[command(flatten)]
        input: InputArgs,
        /// Output directory (default: the configured store).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a Markdown knowledge corpus into an index.
    KbBuild {
        #[arg(long, default_value = "data/knowledge")]
        corpus: PathBuf,
        /// Output directory (default: the configured index path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question over the store and the knowledge index.
    Query {
        #[arg(long)]
        question: String,
        /// Also print the full answer with its audit trail as JSON.
        #[arg(long)]
        audit: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write a synthetic record store, and optionally raw CSVs.
    DemoData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "2024-10-01")]
        from: NaiveDate,
        #[arg(long, default_value_t = 227)]
        days: u32,
        #[arg(long, default_value_t = 9)]
        packs: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        /// Also write per-pack CSVs of a short raw dataset here.
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        raw_days: u32,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Directory of per-pack CSV files.
    #[arg(long)]
    pub input: PathBuf,
}

impl Cli {
    pub fn config(&self) -> anyhow::Result<Config> {
        let mut c = match &self.global.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = &self.global.store {
            c.store_dir = s.clone();
        }
        if let Some(i) = &self.global.index {
            c.index_path = i.clone();
        }
        if let Some(p) = self.global.llm {
            c.llm.provider = match p {
                ProviderArg::Mock => Provider::Mock,
                ProviderArg::Http => Provider::Http,
            };
        }
        if self.global.sequential {
            c.pipeline.exec = bess_core::ExecMode::Sequential;
        }
        Ok(c)
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn operations(input: &Path, c: &Config) -> anyhow::Result<Vec<OperationSegment>> {
    let raw = ingest::load_dir(input)?;
    let (table, _) = ingest::clean(&raw, &c.pipeline.clean)?;
    Ok(ingest::segment_operations(&table, &c.pipeline.segment))
}

/// Loads store and index and wires the agents.
pub fn orchestrator(c: &Config) -> anyhow::Result<(Orchestrator, Arc<RecordStore>)> {
    let store = Arc::new(
        RecordStore::load(&c.store_dir).with_context(|| format!("loading record store {}", c.store_dir.display()))?,
    );
    let index = KnowledgeIndex::load(&c.index_path)
        .with_context(|| format!("loading knowledge index {} (run kb-build first)", c.index_path.display()))?;
    let embedder = c.embedder()?;
    if index.fingerprint != embedder.fingerprint() {
        bail!(
            "knowledge index was built with {:?} but the configured embedder is {:?}; rebuild it with kb-build",
            index.fingerprint,
            embedder.fingerprint()
        );
    }
    let orch = Orchestrator {
        llm: c.llm()?,
        embedder,
        store: store.clone(),
        index: Arc::new(index),
        config: c.agent.clone(),
    };
    Ok((orch, store))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let c = cli.config()?;
    match cli.command {
        Command::Ingest(a) => {
            let raw = ingest::load_dir(&a.input)?;
            let (table, report) = ingest::clean(&raw, &c.pipeline.clean)?;
            let rows: std::collections::BTreeMap<u32, usize> =
                raw.packs.iter().map(|(id, s)| (*id, s.rows.len())).collect();
            print_json(&json!({
                "packs": raw.packs.len(),
                "rows": rows,
                "clean_rows": table.row_count(),
                "diagnostics": raw.diagnostics,
                "clean": report,
            }))
        }
        Command::SelectOps(a) => {
            let ops = operations(&a.input, &c)?;
            let decisions = decide_all(&ops, &c.pipeline.selection, c.pipeline.exec);
            let mut out = std::io::stdout().lock();
            writeln!(out, "pack\ttype\tstart\tduration_s\tcurrent_a\trmse_a\tstandard")?;
            for (op, d) in ops.iter().zip(&decisions) {
                let (cur, rmse) = d
                    .fit
                    .as_ref()
                    .map(|f| (format!("{:.2}", f.c_star), format!("{:.3}", f.rmse)))
                    .unwrap_or(("-".into(), "-".into()));
                let verdict = match d.rejected {
                    None => "yes".to_string(),
                    Some(r) => format!("no ({})", serde_json::to_value(r)?.as_str().unwrap_or("?")),
                };
                writeln!(
                    out,
                    "{}\t{}\t{}\t{:.0}\t{cur}\t{rmse}\t{verdict}",
                    op.pack_id(),
                    op.op_type(),
                    op.start().format("%Y-%m-%dT%H:%M:%SZ"),
                    d.duration_s
                )?;
            }
            let standard = decisions.iter().filter(|d| d.accepted()).count();
            writeln!(out, "{standard} of {} operations are standard", ops.len())?;
            Ok(())
        }
        Command::Evaluate(a) => {
            let ops = operations(&a.input, &c)?;
            print_json(&evaluate_operations(&ops, &c.pipeline))
        }
        Command::BuildRecords { input, out } => {
            let (store, report) = build_records_from_dir(&input.input, &c.pipeline)?;
            let dir = out.unwrap_or(c.store_dir);
            store.save(&dir)?;
            print_json(&report)?;
            eprintln!("wrote {} dates to {}", store.len(), dir.display());
            Ok(())
        }
        Command::KbBuild { corpus, out } => {
            let (slices, diags) = load_corpus(&corpus)?;
            for d in &diags {
                eprintln!("warning: {}:{}: {}", d.source, d.line, d.message);
            }
            let embedder = c.embedder()?;
            let index = KnowledgeIndex::build(slices, &*embedder)?;
            let dir = out.unwrap_or(c.index_path);
            let path = index.save(&dir)?;
            println!("indexed {} slices into {}", index.len(), path.display());
            Ok(())
        }
        Command::Query { question, audit } => {
            let (orch, _) = orchestrator(&c)?;
            let answer = orch.answer(&question)?;
            let mut out = std::io::stdout().lock();
            write!(out, "{}", answer.render_text())?;
            if audit {
                writeln!(out, "{}", answer.deterministic_json().trim_end())?;
            }
            Ok(())
        }
        Command::Serve { bind } => {
            // blocking HTTP clients must exist before the runtime does
            let (orch, store) = orchestrator(&c)?;
            let mut state = AppState::new(orch, store, Duration::from_secs(c.server.request_timeout_s));
            if let Some(p) = &c.server.audit_log {
                state = state.with_audit_log(p).with_context(|| format!("opening audit log {}", p.display()))?;
            }
            let app = api::router(Arc::new(state), &c.server.cors_origins);
            let bind = bind.unwrap_or(c.server.bind);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                tracing::info!("listening on {}", listener.local_addr()?);
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })
        }
        Command::DemoData {
            out,
            from,
            days,
            packs,
            seed,
            raw,
            raw_days,
        } => {
            if packs == 0 || days == 0 {
                bail!("--packs and --days must be positive");
            }
            let store = synth::record_store(packs, from, days, seed);
            let dir = out.unwrap_or(c.store_dir);
            store.save(&dir)?;
            println!("wrote {} dates for {packs} packs to {}", store.len(), dir.display());
            if let Some(raw) = raw {
                let spec = DatasetSpec {
                    packs: packs as u32,
                    days: raw_days,
                    first_date: from,
                    seed,
                    ..Default::default()
                };
                let files = synth::write_dataset(&raw, &spec)?;
                println!("wrote {} CSV files to {}", files.len(), raw.display());
            }
            Ok(())
        }
    }
}
