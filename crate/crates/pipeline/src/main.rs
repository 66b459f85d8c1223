use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use techradar_core::fetcher::CrawlPolicy;
use techradar_pipeline::config::DATA_DIR_ENV;
use techradar_pipeline::labeling::service::{serve, AppState};
use techradar_pipeline::labeling::LabelStore;
use techradar_pipeline::stages::{FetchSource, GeoArgs, RunAllArgs};
use techradar_pipeline::{Config, Pipeline, StageOutcome};

#[derive(Parser)]
#[command(name = "techradar", version, about = "Map firms engaged in a technology (3D printing) from their websites")]
struct Cli {
    /// Directory holding every artifact and the run manifest.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skip stages whose inputs, parameters and outputs are unchanged.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Replay pages from an archive directory with a manifest.ndjson.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Fetch over the network.
    #[arg(long)]
    live: bool,
}

impl Source {
    fn into_source(self) -> FetchSource {
        match self.archive {
            Some(dir) => FetchSource::Archive(dir),
            None => FetchSource::Live,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse the firm registry.
    Ingest {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        delimiter: Option<char>,
    },
    /// Crawl company websites.
    Fetch {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        max_depth: Option<u32>,
        #[arg(long)]
        max_pages: Option<usize>,
        #[arg(long)]
        delay_ms: Option<u64>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        no_robots: bool,
        #[arg(long)]
        contact: Option<String>,
    },
    /// Extract keyword-in-context data points.
    Extract {
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Open a labeling round.
    Round {
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated annotator ids.
        #[arg(long, value_delimiter = ',')]
        annotators: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the labeling API (and optionally the labeling UI).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "TECHRADAR_TOKEN")]
        token: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write labeled tasks as a training set.
    ExportLabels {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated round numbers; all rounds when omitted.
        #[arg(long, value_delimiter = ',')]
        rounds: Option<Vec<u32>>,
    },
    /// Embed data points and train the voting ensemble.
    Train {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict every data point.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Company labels and summary tables.
    Aggregate {
        #[arg(long)]
        min_confidence: Option<f64>,
        #[arg(long)]
        innovation_threshold: Option<f64>,
    },
    /// Regional statistics, hotspots and map layers.
    Geo {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        min_total: Option<u64>,
        #[arg(long)]
        cell_deg: Option<f64>,
        #[arg(long)]
        bandwidth_deg: Option<f64>,
    },
    /// Markdown summary of the latest results.
    Report,
    /// ingest, fetch, extract, train, predict, aggregate and geo.
    RunAll {
        #[arg(long)]
        registry: PathBuf,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
}

fn print(outcome: &StageOutcome) {
    println!("{}: {} {}", outcome.stage, serde_json::to_string(&outcome.status).unwrap_or_default().trim_matches('"'), outcome.summary);
}

fn policy(base: &CrawlPolicy, max_depth: Option<u32>, max_pages: Option<usize>, delay_ms: Option<u64>, concurrency: Option<usize>, no_robots: bool) -> CrawlPolicy {
    let mut p = base.clone();
    if let Some(v) = max_depth {
        p.max_depth = v;
    }
    if let Some(v) = max_pages {
        p.max_pages_per_site = v;
    }
    if let Some(v) = delay_ms {
        p.per_host_delay_ms = v;
    }
    if let Some(v) = concurrency {
        p.global_concurrency = v;
    }
    if no_robots {
        p.obey_robots = false;
    }
    p
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Ingest { delimiter: Some(d), .. } => config.registry.delimiter = *d,
        Command::Fetch { contact: Some(c), .. } => config.fetch.contact = c.clone(),
        Command::Geo { top_k, min_total, cell_deg, bandwidth_deg, .. } => {
            let g = &mut config.geo;
            g.top_k = top_k.unwrap_or(g.top_k);
            g.min_total = min_total.unwrap_or(g.min_total);
            g.cell_deg = cell_deg.unwrap_or(g.cell_deg);
            g.bandwidth_deg = bandwidth_deg.unwrap_or(g.bandwidth_deg);
        }
        Command::RunAll { lexicon: Some(l), .. } => config.extract.lexicon = Some(l.clone()),
        _ => {}
    }
    config.validate().map_err(anyhow::Error::msg).context("invalid configuration")?;
    let mut pipeline = Pipeline::new(&cli.data_dir, config);
    pipeline.resume = cli.resume;

    match cli.command {
        Command::Ingest { registry, .. } => print(&pipeline.ingest(&registry)?),
        Command::Fetch { source, max_depth, max_pages, delay_ms, concurrency, no_robots, .. } => {
            let p = policy(&pipeline.config.crawl, max_depth, max_pages, delay_ms, concurrency, no_robots);
            print(&pipeline.fetch(&source.into_source(), &p)?)
        }
        Command::Extract { lexicon } => print(&pipeline.extract(lexicon.as_deref())?),
        Command::Round { n, annotators, seed } => {
            let l = &pipeline.config.labeling;
            let annotators = if annotators.is_empty() { l.annotators.clone() } else { annotators };
            let (n, seed) = (n.unwrap_or(l.round_size), seed.unwrap_or(l.seed));
            print(&pipeline.round(n, &annotators, seed)?)
        }
        Command::Serve { bind, token, static_dir } => {
            let store = LabelStore::open(&pipeline.label_dir())?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("cannot bind {bind}"))?;
                println!("listening on {}", listener.local_addr()?);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                serve(listener, AppState::new(store, token), static_dir, shutdown).await?;
                anyhow::Ok(())
            })?
        }
        Command::ExportLabels { out, rounds } => print(&pipeline.export_labels(out.as_deref(), rounds.as_deref())?),
        Command::Train { labels, vectors, out, seed } => {
            print(&pipeline.train(labels.as_deref(), vectors.as_deref(), out.as_deref(), seed)?)
        }
        Command::Predict { model, input, out } => print(&pipeline.predict(model.as_deref(), input.as_deref(), out.as_deref())?),
        Command::Aggregate { min_confidence, innovation_threshold } => {
            print(&pipeline.aggregate(min_confidence, innovation_threshold)?)
        }
        Command::Geo { labels, registry, regions, out_dir, .. } => {
            print(&pipeline.geo(&GeoArgs { labels, registry, regions, out_dir })?)
        }
        Command::Report => print(&pipeline.report()?),
        Command::RunAll { registry, source, labels, regions, .. } => {
            let args = RunAllArgs { registry, source: source.into_source(), labels, regions };
            for o in pipeline.run_all(&args)? {
                print(&o);
            }
        }
    }
    Ok(())
}
