use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dms_core::embedding::{decode_vectors, EmbeddingVector};
use dms_service::api::{parse_json, render, ApiError, ApiResult, IngestRequest, Op, QueryRequest, Samples, UploadManifest};
use dms_service::{http, Service, ServiceConfig};
use serde::Serialize;

/// Data management service: ingest labelled data, query distributions,
/// recommend models and administer system updates.
///
/// Every subcommand except `serve` runs locally against the configured data
/// directory and prints the same JSON the HTTP API returns.
#[derive(Debug, Parser)]
#[command(name = "dms", version)]
struct Cli {
    /// TOML configuration file. `DMS_*` environment variables override it.
    #[arg(long, global = true, env = "DMS_CONFIG")]
    config: Option<PathBuf>,
    /// Data directory; overrides the configured one.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Indent JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Insert labelled records.
    Ingest(IngestArgs),
    /// Run a query: distribution, lookup, recommendation, certainty.
    Query(QueryArgs),
    /// Rank registered models against a dataset's distribution.
    Recommend {
        #[arg(long)]
        dataset: String,
    },
    /// Register a trained model from a JSON registration file.
    RegisterModel {
        #[arg(long)]
        file: PathBuf,
        /// Artifact bytes; replaces the artifact in the file with a blob.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Run a system update now.
    Update,
    /// Print generation, store, zoo and drift status.
    Status,
    /// Write stored embeddings as an `FDMS` file plus a JSON manifest.
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Manifest path; defaults to `<out>.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
    },
    /// Time repeated lookups and report latency percentiles.
    BenchLookup {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// JSON file: `{"records": [...]}` or a bare array of records.
    #[arg(long, conflicts_with_all = ["vectors", "manifest"], required_unless_present = "vectors")]
    records: Option<PathBuf>,
    /// `FDMS` vector file.
    #[arg(long, requires = "manifest")]
    vectors: Option<PathBuf>,
    /// Upload manifest for `--vectors`.
    #[arg(long, requires = "vectors")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// JSON query request.
    #[arg(long, conflicts_with = "vectors", required_unless_present = "vectors")]
    request: Option<PathBuf>,
    /// `FDMS` vector file to query with.
    #[arg(long, requires = "dataset")]
    vectors: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated subset of lookup, recommend, certainty, pseudo-label.
    #[arg(long, value_delimiter = ',')]
    ops: Vec<Op>,
    /// Lookup count.
    #[arg(short = 'n', long = "n")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn read(path: &PathBuf) -> ApiResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| ApiError::BadRequest(format!("{}: {e}", path.display())))
}

fn ingest_request(bytes: &[u8]) -> ApiResult<IngestRequest> {
    parse_json::<IngestRequest>(bytes).or_else(|e| parse_json(bytes).map(|records| IngestRequest { records }).map_err(|_| e))
}

fn query_request(args: QueryArgs) -> ApiResult<QueryRequest> {
    let mut req = match (&args.request, &args.vectors) {
        (Some(path), _) => parse_json::<QueryRequest>(&read(path)?)?,
        (None, Some(path)) => {
            let (_, rows) = decode_vectors(&read(path)?)?;
            let vectors = rows.into_iter().map(EmbeddingVector::new).collect::<Result<_, _>>()?;
            QueryRequest {
                dataset_id: String::new(),
                samples: Samples::Embeddings { ids: Vec::new(), vectors },
                ops: [Op::Lookup, Op::Recommend, Op::Certainty].into(),
                n: None,
                seed: None,
            }
        }
        (None, None) => unreachable!("clap requires --request or --vectors"),
    };
    if let Some(d) = args.dataset {
        req.dataset_id = d;
    }
    if !args.ops.is_empty() {
        req.ops = args.ops.into_iter().collect();
    }
    req.n = args.n.or(req.n);
    req.seed = args.seed.or(req.seed);
    Ok(req)
}

fn emit<T: Serialize>(value: &T, pretty: bool) -> ApiResult<()> {
    let text = if pretty {
        serde_json::to_string_pretty(value).expect("response types serialize")
    } else {
        render(value)
    };
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> ApiResult<()> {
    let mut config = ServiceConfig::load(cli.config.as_deref()).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if let Some(dir) = cli.data_dir {
        config.data_dir = Some(dir);
    }
    let pretty = cli.pretty;

    if let Command::Serve { listen } = cli.command {
        if let Some(addr) = listen {
            config.listen = addr;
        }
        let service = Arc::new(Service::new(config)?);
        let runtime = tokio::runtime::Runtime::new().map_err(dms_core::Error::from)?;
        return runtime.block_on(http::serve(service)).map_err(|e| dms_core::Error::from(e).into());
    }

    let service = Service::new(config)?;
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Ingest(args) => {
            let resp = match (args.records, args.vectors, args.manifest) {
                (Some(path), _, _) => service.ingest(ingest_request(&read(&path)?)?)?,
                (None, Some(vectors), Some(manifest)) => {
                    let manifest: UploadManifest = parse_json(&read(&manifest)?)?;
                    service.ingest_binary(manifest, &read(&vectors)?)?
                }
                _ => unreachable!("clap enforces the argument groups"),
            };
            emit(&resp, pretty)
        }
        Command::Query(args) => emit(&service.query(query_request(args)?)?, pretty),
        Command::Recommend { dataset } => emit(&service.rank(&dataset)?, pretty),
        Command::RegisterModel { file, artifact } => {
            let mut reg: dms_core::modelzoo::ModelRegistration = parse_json(&read(&file)?)?;
            if let Some(path) = artifact {
                reg.artifact = dms_core::modelzoo::ArtifactInput::Blob { bytes: read(&path)? };
            }
            emit(&service.register_model(reg)?, pretty)
        }
        Command::Update => emit(&service.force_update()?, pretty),
        Command::Status => emit(&service.status()?, pretty),
        Command::Export { out, manifest, source } => {
            let export = service.export(source.as_deref())?;
            let manifest_path = manifest.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".json");
                p.into()
            });
            std::fs::write(&out, &export.vectors).map_err(dms_core::Error::from)?;
            std::fs::write(&manifest_path, render(&export.manifest)).map_err(dms_core::Error::from)?;
            emit(&export.summary(), pretty)
        }
        Command::BenchLookup { n, iters } => emit(&service.bench_lookup(n, iters)?, pretty),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", render(&e.body()));
            ExitCode::FAILURE
        }
    }
}
