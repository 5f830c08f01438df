//! `geoscholar` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a stage or
//! computation failed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use geoscholar::corpus::{
    load_corpus, load_covariates, write_jsonl, AnnotationRecord, LoadOptions, MigrationEvent, PublicationRecord,
    Taxonomy,
};
use geoscholar::econo::{
    build_panel, cem_match, did_estimate, parallel_trends_test, pre_period_summaries, read_panel_csv, write_panel_csv,
    PanelSpec, DEFAULT_CUTPOINTS,
};
use geoscholar::eval::evaluate;
use geoscholar::extract::{extract_corpus, read_mentions, ExtractOptions, TopicQuery};
use geoscholar::gazetteer::{CompiledGazetteer, GazetteerSource};
use geoscholar::metrics::attention_table;
use geoscholar::network::{
    build_attention, build_funding, build_migration, read_edges_csv, write_edges_csv, NetworkKind, NetworkOptions,
};
use geoscholar::pipeline::{
    has_errors, metrics_csv, rank_rows, ranks_csv, run_pipeline, validate, write_reference_fixture, ControlSpec,
    PipelineError, RunConfig, MANIFEST_FILE, WORKERS_ENV,
};
use geoscholar::synth::{write_fixture_data, SynthPlan};

#[derive(Parser)]
#[command(
    name = "geoscholar",
    version,
    about = "Country-attention networks and difference-in-differences for publication corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract country mentions from publication titles and abstracts.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        /// Boolean keyword query, or `default` for the built-in one.
        #[arg(long)]
        topic_query: Option<String>,
        #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score extracted mentions against two-coder annotations.
    Eval {
        #[arg(long)]
        mentions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an attention, funding or migration network as an edge list.
    Network {
        #[arg(long)]
        kind: NetworkKind,
        /// Publications (attention, funding) or migration events.
        #[arg(long)]
        corpus: PathBuf,
        /// Extraction output; required for attention and funding.
        #[arg(long)]
        mentions: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        stratify: bool,
        #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention split per country-year, plus ranks and NRC.
    Metrics {
        #[arg(long)]
        edges: PathBuf,
        /// Config supplying the periods; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ranks: Option<PathBuf>,
    },
    /// Build the DiD panel from an attention edge list.
    Panel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the DiD and parallel-trends regressions on a panel.
    Did {
        #[arg(long)]
        panel: PathBuf,
        /// Treatment group labels; defaults to every group in the panel.
        #[arg(long, value_delimiter = ',')]
        groups: Vec<String>,
        #[arg(long, default_value_t = 2011)]
        event_year: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coarsened exact matching of control countries.
    Cem {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic fixture.
    Synth {
        /// Plan file; the built-in reference plan when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run every stage from one config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides GEOSCHOLAR_WORKERS and the config file.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn failed(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn gazetteer(path: Option<&Path>) -> Result<GazetteerSource, Failure> {
    match path {
        None => Ok(GazetteerSource::default_source()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?;
            let src =
                GazetteerSource::from_toml_str(&text).with_context(|| p.display().to_string()).map_err(invalid)?;
            src.validate().with_context(|| p.display().to_string()).map_err(invalid)?;
            Ok(src)
        }
    }
}

fn taxonomy(path: Option<&Path>) -> Result<Taxonomy, Failure> {
    match path {
        None => Ok(Taxonomy::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?;
            Taxonomy::from_toml_str(&text).with_context(|| p.display().to_string()).map_err(invalid)
        }
    }
}

fn report_diagnostics(label: &str, n_errors: usize, n: usize) {
    if n > 0 {
        eprintln!("{label}: {n} diagnostic(s), {n_errors} line(s) skipped");
    }
}

fn load_records(path: &Path) -> Result<Vec<PublicationRecord>, Failure> {
    let l = load_corpus::<PublicationRecord>(path, &LoadOptions::default()).map_err(|e| invalid(e.into()))?;
    report_diagnostics(&path.display().to_string(), l.errors().count(), l.diagnostics.len());
    Ok(l.records)
}

fn load_mentions(path: &Path) -> Result<Vec<geoscholar::extract::MentionResult>, Failure> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(invalid)?;
    read_mentions(BufReader::new(f)).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::from_path(path).map_err(|e| invalid(e.into()))?;
    let diags = validate(&cfg);
    for d in &diags {
        eprintln!("{:?}: {}", d.severity, d.message);
    }
    if has_errors(&diags) {
        return Err(invalid(anyhow!("{} has errors", path.display())));
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Extract { corpus, gazetteer: g, topic_query, workers, out } => {
            let src = gazetteer(g.as_deref())?;
            let gaz = CompiledGazetteer::compile(&src).map_err(|e| invalid(e.into()))?;
            let query = match topic_query.as_deref() {
                None => None,
                Some(q) if q.eq_ignore_ascii_case("default") => Some(TopicQuery::default_query()),
                Some(q) => Some(TopicQuery::parse(q).map_err(|e| invalid(anyhow!("topic query: {e}")))?),
            };
            let records = load_records(&corpus)?;
            let mentions = extract_corpus(&records, &gaz, &ExtractOptions { workers, topic_query: query.as_ref() });
            let mut w = create(&out).map_err(failed)?;
            write_jsonl(&mut w, &mentions).map_err(|e| failed(e.into()))?;
            w.flush().map_err(|e| failed(e.into()))?;
        }
        Command::Eval { mentions, annotations, out } => {
            let mentions = load_mentions(&mentions)?;
            let ann = load_corpus::<AnnotationRecord>(&annotations, &LoadOptions::default())
                .map_err(|e| invalid(e.into()))?;
            let report = evaluate(&mentions, &ann.records).map_err(|e| failed(e.into()))?;
            write_json(&out, &report).map_err(failed)?;
            println!(
                "n={} accuracy_union={:.4} jaccard_union={:.4} agreement={:.4}",
                report.n, report.accuracy_union, report.jaccard_union, report.intercoder_agreement
            );
        }
        Command::Network { kind, corpus, mentions, gazetteer: g, taxonomy: t, stratify, workers, out } => {
            let src = gazetteer(g.as_deref())?;
            let excluded = src.excluded_set();
            let net = match kind {
                NetworkKind::Migration => {
                    let ev = load_corpus::<MigrationEvent>(&corpus, &LoadOptions::default())
                        .map_err(|e| invalid(e.into()))?;
                    let (net, skipped) = build_migration(&ev.records, &excluded);
                    if skipped > 0 {
                        eprintln!("{skipped} event(s) touching excluded territories skipped");
                    }
                    net
                }
                NetworkKind::Attention | NetworkKind::Funding => {
                    let m = mentions
                        .ok_or_else(|| invalid(anyhow!("--mentions is required for {} networks", kind.as_str())))?;
                    let records = load_records(&corpus)?;
                    let mentions = load_mentions(&m)?;
                    let tax = taxonomy(t.as_deref())?;
                    let opts = NetworkOptions { taxonomy: &tax, excluded: &excluded, stratify, workers };
                    let (net, stats) = if kind == NetworkKind::Attention {
                        build_attention(&records, &mentions, &opts)
                    } else {
                        build_funding(&records, &mentions, &opts)
                    };
                    eprintln!("{} of {} papers contribute", stats.contributing, stats.papers);
                    net
                }
            };
            let mut w = create(&out).map_err(failed)?;
            write_edges_csv(&mut w, &net).map_err(|e| failed(e.into()))?;
            w.flush().map_err(|e| failed(e.into()))?;
        }
        Command::Metrics { edges, config, out, ranks } => {
            let periods = match &config {
                Some(c) => load_config(c)?.periods,
                None => Default::default(),
            };
            let f = File::open(&edges).with_context(|| format!("opening {}", edges.display())).map_err(invalid)?;
            let net = read_edges_csv(BufReader::new(f), NetworkKind::Attention).map_err(|e| invalid(e.into()))?;
            let table = attention_table(&net.collapse_disciplines());
            let bytes = metrics_csv(&table).map_err(|e| failed(anyhow!(e)))?;
            create(&out).and_then(|mut w| Ok(w.write_all(&bytes)?)).map_err(failed)?;
            if let Some(r) = ranks {
                let bytes = ranks_csv(&rank_rows(&table, &periods)).map_err(|e| failed(anyhow!(e)))?;
                create(&r).and_then(|mut w| Ok(w.write_all(&bytes)?)).map_err(failed)?;
            }
        }
        Command::Panel { config, edges, out } => {
            let cfg = load_config(&config)?;
            let f = File::open(&edges).with_context(|| format!("opening {}", edges.display())).map_err(invalid)?;
            let net = read_edges_csv(BufReader::new(f), NetworkKind::Attention).map_err(|e| invalid(e.into()))?;
            let table = attention_table(&net.collapse_disciplines());
            let cov = load_covariates(&cfg.resolve(&cfg.inputs.covariates)).map_err(|e| invalid(e.into()))?;
            let controls: BTreeSet<_> = match &cfg.controls {
                ControlSpec::Mena { countries } => countries.clone(),
                ControlSpec::World => {
                    let treated = cfg.groups.members();
                    let excluded =
                        gazetteer(cfg.inputs.gazetteer.as_ref().map(|p| cfg.resolve(p)).as_deref())?.excluded_set();
                    cov.records
                        .iter()
                        .map(|c| c.country)
                        .filter(|c| !treated.contains(c) && !excluded.contains(c))
                        .collect()
                }
                ControlSpec::Cem { .. } => {
                    return Err(invalid(anyhow!("cem controls need the full pipeline; use `geoscholar run`")));
                }
            };
            let mut panels = Vec::new();
            for &outcome in &cfg.analysis.outcomes {
                let spec = PanelSpec {
                    groups: &cfg.groups,
                    controls: &controls,
                    periods: &cfg.periods,
                    outcome,
                    zero_policy: cfg.analysis.zero_policy,
                    covariates: &cfg.analysis.covariates,
                };
                let (panel, diag) = build_panel(&table, &cov.records, &spec);
                eprintln!(
                    "{}: {} rows, {} zero outcomes dropped",
                    outcome.as_str(),
                    panel.rows.len(),
                    diag.zero_outcome_dropped
                );
                panels.push(panel);
            }
            let mut w = create(&out).map_err(failed)?;
            write_panel_csv(&mut w, &panels).map_err(|e| failed(e.into()))?;
            w.flush().map_err(|e| failed(e.into()))?;
        }
        Command::Did { panel, groups, event_year, out } => {
            let f = File::open(&panel).with_context(|| format!("opening {}", panel.display())).map_err(invalid)?;
            let panels = read_panel_csv(BufReader::new(f)).map_err(|e| invalid(e.into()))?;
            let mut results = serde_json::Map::new();
            let mut any_failed = false;
            for (measure, p) in &panels {
                let labels = if groups.is_empty() { p.group_labels() } else { groups.clone() };
                let entry = match did_estimate(p, &labels) {
                    Ok(d) => {
                        for c in &d.treatment {
                            println!(
                                "{measure} {} beta={:.6} se={:.6} p={:.4} within_r2={:.4}",
                                c.name, c.beta, c.se, c.p_value, d.within_r2
                            );
                        }
                        let pre = parallel_trends_test(p, &labels, event_year);
                        serde_json::json!({
                            "did": d,
                            "pretrend": pre.as_ref().ok(),
                            "pretrend_error": pre.as_ref().err().map(|e| e.to_string()),
                        })
                    }
                    Err(e) => {
                        any_failed = true;
                        eprintln!("{measure}: {e}");
                        serde_json::json!({ "error": e.to_string() })
                    }
                };
                results.insert(measure.clone(), entry);
            }
            write_json(&out, &results).map_err(failed)?;
            if any_failed {
                return Err(failed(anyhow!("estimation failed for at least one measure")));
            }
        }
        Command::Cem { config, out } => {
            let cfg = load_config(&config)?;
            let cov = load_covariates(&cfg.resolve(&cfg.inputs.covariates)).map_err(|e| invalid(e.into()))?;
            let (cutpoints, which) = match &cfg.controls {
                ControlSpec::Cem { cutpoints, covariates } => (
                    cutpoints.clone().unwrap_or_else(|| DEFAULT_CUTPOINTS.to_vec()),
                    covariates.clone().unwrap_or_else(|| cfg.analysis.covariates.clone()),
                ),
                _ => (DEFAULT_CUTPOINTS.to_vec(), cfg.analysis.covariates.clone()),
            };
            let excluded = gazetteer(cfg.inputs.gazetteer.as_ref().map(|p| cfg.resolve(p)).as_deref())?.excluded_set();
            let candidates = cov.records.iter().map(|c| c.country).filter(|c| !excluded.contains(c)).collect();
            let summaries = pre_period_summaries(&cov.records, &candidates, &cfg.periods, &which);
            let names: Vec<String> = which.iter().map(|c| c.as_str().to_string()).collect();
            let r = cem_match(&summaries, &names, &cfg.groups.members(), &cutpoints).map_err(|e| failed(e.into()))?;
            println!("{} strata, {} matched controls", r.strata.len(), r.matched_controls.len());
            write_json(&out, &r).map_err(failed)?;
        }
        Command::Synth { plan, out_dir } => {
            let written = match plan {
                None => write_reference_fixture(&geoscholar::pipeline::reference_plan(), &out_dir)
                    .map(|p| p.display().to_string()),
                Some(p) => {
                    let plan = SynthPlan::from_path(&p).map_err(|e| invalid(e.into()))?;
                    write_fixture_data(&plan, &GazetteerSource::default_source(), &out_dir)
                        .map(|_| out_dir.display().to_string())
                }
            };
            let written = written.map_err(|e| failed(e.into()))?;
            println!("wrote {written}");
        }
        Command::Run { config, workers } => {
            let cfg = RunConfig::from_path(&config).map_err(|e| invalid(e.into()))?;
            let n = cfg.resolve_workers(workers);
            let manifest = match run_pipeline(&cfg, n) {
                Ok(m) => m,
                Err(
                    e @ (PipelineError::Invalid(_) | PipelineError::ParseConfig(_) | PipelineError::ReadConfig { .. }),
                ) => return Err(invalid(e.into())),
                Err(e) => return Err(failed(e.into())),
            };
            for s in &manifest.stages {
                let detail = s.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default();
                println!("{:<8} {:?}{detail}", s.name, s.status);
            }
            println!("manifest: {}", cfg.output_path().join(MANIFEST_FILE).display());
            if !manifest.ok() {
                return Err(failed(anyhow!("one or more stages failed")));
            }
        }
        Command::Validate { config } => {
            let cfg = RunConfig::from_path(&config).map_err(|e| invalid(e.into()))?;
            let diags = validate(&cfg);
            for d in &diags {
                println!("{:?}: {}", d.severity, d.message);
            }
            if has_errors(&diags) {
                return Err(invalid(anyhow!("{} has errors", config.display())));
            }
            if diags.is_empty() {
                println!("ok");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
