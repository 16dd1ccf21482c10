use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use laser_core::attention::{Checkpoint, LaserConfig};
use laser_core::flops::compare_report;
use laser_core::harness::bench::{attention_suite, store_suite, wire_suite};
use laser_core::harness::{
    eval_ablations, evaluate, train, AblationCell, BenchOptions, Corpus, CtrConfig, CtrModel, Suite, SynthConfig,
    TargetItem, TrainConfig,
};
use laser_core::serving::{Client, ScoreRequest, Server, ServerConfig, Service};
use laser_core::store::{BehaviorEvent, SequenceSchema, StoreConfig, StoreHandle};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

mod output;
use output::{emit, out};

#[derive(Parser)]
#[command(name = "laser", version, about = "Long-sequence CTR stack: attention, store, server and harness")]
struct Cli {
    /// Print structured JSON instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a corpus and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON with optional `model` and `train` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, or train and compare ablation cells.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_unless_present = "ablation")]
        ckpt: Option<PathBuf>,
        /// Comma-separated cells, e.g. `full,softmax,no_fusion,w20`.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// Evaluate on every sample instead of the validation split.
        #[arg(long)]
        all: bool,
    },
    /// Time a benchmark suite.
    Bench {
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        /// Smaller sizes for a quick look.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Closed-form FLOPs of LASER and the attention baselines.
    Flops(FlopsArgs),
    /// Operate on a local sequence store directory.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Serve the store and an optional model over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        no_compress: bool,
    },
    /// Send requests to a running server.
    #[command(subcommand)]
    Client(ClientCommand),
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, default_value_t = 1000)]
    l: usize,
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 32)]
    dq: usize,
    #[arg(long, default_value_t = 10)]
    w: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    r: usize,
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Create a store, optionally with a schema JSON file.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Append events from JSON lines `{"user": u64, "event": {...}}`.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        file: PathBuf,
    },
    Get {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        user: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    Merge {
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated user ids; all users when absent.
        #[arg(long)]
        users: Option<String>,
    },
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClientCommand {
    /// Send events from JSON lines, one event object per line.
    Put {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        user: u64,
        #[arg(long)]
        file: PathBuf,
    },
    Get {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        user: u64,
        #[arg(long, default_value_t = 100)]
        n: u32,
    },
    Score {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        user: u64,
        #[arg(long, default_value_t = 1000)]
        n: u32,
        #[arg(long)]
        item: u64,
        #[arg(long)]
        category: u32,
        /// Seconds since the epoch.
        #[arg(long)]
        time: i64,
    },
    Stats {
        #[arg(long)]
        addr: String,
    },
    Merge {
        #[arg(long)]
        addr: String,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).ok_or_else(|| format!("unknown suite {s:?}; expected attention, store or wire"))
}

/// Model and training settings read by `train` and `eval --ablation`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    model: CtrConfig,
    train: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    samples: usize,
    fingerprint: u64,
    positives: usize,
}

const CORPUS_CONFIG: &str = "config.json";
const CORPUS_MANIFEST: &str = "manifest.json";
const CORPUS_SAMPLES: &str = "samples.jsonl";

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let cfg: SynthConfig = read_json(&dir.join(CORPUS_CONFIG))?;
    let corpus = Corpus::generate(cfg)?;
    let manifest: CorpusManifest = read_json(&dir.join(CORPUS_MANIFEST))?;
    if manifest.fingerprint != corpus.fingerprint() {
        bail!("corpus in {} does not match its manifest fingerprint", dir.display());
    }
    Ok(corpus)
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_json)
}

fn load_model(path: &Path) -> Result<CtrModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(CtrModel::from_checkpoint(&ckpt)?)
}

fn read_json_lines(path: &Path) -> Result<Vec<Map<String, Json>>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))? {
            Json::Object(o) => out.push(o),
            _ => bail!("{}:{}: expected a JSON object", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn events_json(schema: &SequenceSchema, events: &[BehaviorEvent]) -> Json {
    Json::Array(events.iter().map(|e| Json::Object(schema.event_to_json(e))).collect())
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Gen { config, out, seed } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => read_json(&p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = Corpus::generate(cfg.clone())?;
            fs::create_dir_all(&out)?;
            write_json(&out.join(CORPUS_CONFIG), &cfg)?;
            let manifest = CorpusManifest {
                samples: corpus.len(),
                fingerprint: corpus.fingerprint(),
                positives: corpus.samples.iter().filter(|s| s.label).count(),
            };
            write_json(&out.join(CORPUS_MANIFEST), &manifest)?;
            let lines: Vec<String> = corpus
                .samples
                .iter()
                .map(serde_json::to_string)
                .collect::<Result<_, _>>()?;
            fs::write(out.join(CORPUS_SAMPLES), lines.join("\n") + "\n")?;
            emit(&manifest, json);
        }
        Command::Train { corpus, config, out } => {
            let corpus = load_corpus(&corpus)?;
            let run = load_run_config(config.as_deref())?;
            let (tr, va) = corpus.split(run.train.val_fraction);
            let mut model = CtrModel::new(run.model.clone(), run.train.seed)?;
            let report = train(&mut model, &corpus, &tr, &va, &run.train)?;
            model.to_checkpoint().save(&out)?;
            let trace_path = out.with_extension("trace.json");
            write_json(&trace_path, &report)?;
            if json {
                emit(&report, true);
            } else {
                for t in &report.trace {
                    out!(
                        "step={} epoch={} train_loss={:.5} val_auc={:.5} val_logloss={:.5}",
                        t.step, t.epoch, t.train_loss, t.val_auc, t.val_logloss
                    );
                }
                out!("checkpoint={} trace={}", out.display(), trace_path.display());
            }
        }
        Command::Eval {
            corpus,
            ckpt,
            ablation,
            config,
            seeds,
            all,
        } => {
            let corpus = load_corpus(&corpus)?;
            if let Some(cells) = ablation {
                let run = load_run_config(config.as_deref())?;
                let cells: Vec<AblationCell> = cells
                    .split(',')
                    .map(|c| AblationCell::parse(c.trim()).with_context(|| format!("unknown ablation cell {c:?}")))
                    .collect::<Result<_>>()?;
                let seeds: Vec<u64> = seeds
                    .split(',')
                    .map(|s| s.trim().parse().with_context(|| format!("bad seed {s:?}")))
                    .collect::<Result<_>>()?;
                let grid = eval_ablations(&corpus.config, &run.model, &run.train, &cells, &seeds)?;
                if json {
                    emit(&grid, true);
                } else {
                    for c in &grid.cells {
                        let aucs: Vec<String> = c.aucs.iter().map(|a| format!("{a:.5}")).collect();
                        out!(
                            "cell={} mean_auc={:.5} delta={:+.5} aucs={} seconds={:.1}",
                            c.cell,
                            c.mean_auc,
                            c.delta,
                            aucs.join(","),
                            c.seconds
                        );
                    }
                }
            } else {
                let model = load_model(ckpt.as_deref().expect("required by clap"))?;
                let idx: Vec<usize> = if all {
                    (0..corpus.len()).collect()
                } else {
                    corpus.split(0.2).1
                };
                emit(&evaluate(&model, &corpus, &idx)?, json);
            }
        }
        Command::Bench { suite, quick, dir } => {
            let mut opts = BenchOptions::default();
            if quick {
                opts.lengths = vec![250, 500, 1000];
                opts.reps = 5;
                opts.store_events = 2_000;
                opts.store_users = 20;
                opts.wire_frames = 200;
            }
            let scratch = dir.unwrap_or_else(|| std::env::temp_dir().join(format!("laser-bench-{}", std::process::id())));
            let report = match suite {
                Suite::Attention => attention_suite(&opts)?,
                Suite::Store | Suite::Wire => {
                    if scratch.exists() {
                        bail!("{} already exists; pass an unused --dir", scratch.display());
                    }
                    let r = if suite == Suite::Store {
                        store_suite(&scratch, &opts)
                    } else {
                        wire_suite(&scratch, &opts)
                    };
                    let _ = fs::remove_dir_all(&scratch);
                    r?
                }
            };
            if json {
                emit(&report, true);
            } else {
                for r in &report.rows {
                    out!("{} param={} value={:.4} unit={}", r.name, r.param, r.value, r.unit);
                }
                if let Some(f) = report.fit {
                    out!("fit slope={:.6e} intercept={:.6e} r2={:.4}", f.slope, f.intercept, f.r2);
                }
            }
        }
        Command::Flops(a) => {
            let mut cfg = LaserConfig::new(a.l, a.d, a.dq, a.w, a.m);
            cfg.ffn_ratio = a.r;
            let report = compare_report(&cfg);
            if json {
                emit(&report, true);
            } else {
                out!("{report}");
            }
        }
        Command::Store(cmd) => store_command(cmd, json)?,
        Command::Serve {
            addr,
            store_dir,
            checkpoint,
            no_compress,
        } => {
            let store = if store_dir.join("schema.json").exists() {
                StoreHandle::open_existing(&store_dir, StoreConfig::default())?
            } else {
                StoreHandle::open(&store_dir, SequenceSchema::behavior_default(), StoreConfig::default())?
            };
            let model = checkpoint.as_deref().map(load_model).transpose()?;
            let config = ServerConfig {
                compress: !no_compress,
                ..ServerConfig::default()
            };
            let server = Server::bind(addr.as_str(), Service::new(store, model, config))?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run(std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false)))?;
        }
        Command::Client(cmd) => client_command(cmd, json)?,
    }
    Ok(())
}

fn store_command(cmd: StoreCommand, json: bool) -> Result<()> {
    let open = |dir: &Path| StoreHandle::open_existing(dir, StoreConfig::default());
    match cmd {
        StoreCommand::Init { dir, schema } => {
            let schema = match schema {
                Some(p) => SequenceSchema::from_json(&fs::read_to_string(&p)?)?,
                None => SequenceSchema::behavior_default(),
            };
            let store = StoreHandle::open(&dir, schema, StoreConfig::default())?;
            out!("schema_hash={:#018x}", store.schema().schema_hash());
            store.close()?;
        }
        StoreCommand::Ingest { dir, file } => {
            let store = open(&dir)?;
            let mut n = 0usize;
            for (i, mut row) in read_json_lines(&file)?.into_iter().enumerate() {
                let user = row
                    .get("user")
                    .and_then(Json::as_u64)
                    .with_context(|| format!("line {}: missing user", i + 1))?;
                let Some(Json::Object(ev)) = row.remove("event") else {
                    bail!("line {}: missing event object", i + 1);
                };
                store.append_event(user, store.schema().event_from_json(&ev)?)?;
                n += 1;
            }
            store.close()?;
            out!("ingested={n}");
        }
        StoreCommand::Get { dir, user, n } => {
            let store = open(&dir)?;
            let events = store.get_last_n(user, n)?;
            out!("{}", serde_json::to_string_pretty(&events_json(store.schema(), &events))?);
        }
        StoreCommand::Merge { dir, users } => {
            let store = open(&dir)?;
            let users: Option<Vec<u64>> = users
                .map(|u| u.split(',').map(|x| x.trim().parse()).collect())
                .transpose()
                .context("bad --users")?;
            let stats = store.run_merge(users.as_deref())?;
            store.close()?;
            emit(&stats, json);
        }
        StoreCommand::Stats { dir } => {
            let store = open(&dir)?;
            emit(&store.stats()?, json);
        }
    }
    Ok(())
}

fn client_command(cmd: ClientCommand, json: bool) -> Result<()> {
    match cmd {
        ClientCommand::Put { addr, user, file } => {
            let mut c = Client::connect(addr.as_str())?;
            let schema = c.schema()?;
            let events = read_json_lines(&file)?
                .iter()
                .map(|o| schema.event_from_json(o))
                .collect::<Result<Vec<_>, _>>()?;
            let n = events.len();
            c.put(user, events)?;
            out!("put={n}");
        }
        ClientCommand::Get { addr, user, n } => {
            let mut c = Client::connect(addr.as_str())?;
            let schema = c.schema()?;
            let events = c.get_last_n(user, n)?;
            out!("{}", serde_json::to_string_pretty(&events_json(&schema, &events))?);
        }
        ClientCommand::Score {
            addr,
            user,
            n,
            item,
            category,
            time,
        } => {
            let mut c = Client::connect(addr.as_str())?;
            let r = c.score(&ScoreRequest {
                user,
                n,
                target: TargetItem { item, category },
                request_time: time,
            })?;
            if json {
                out!("{}", serde_json::json!({"probability": r.probability, "checksum": format!("{:#018x}", r.checksum)}));
            } else {
                out!("probability={:.9} checksum={:#018x}", r.probability, r.checksum);
            }
        }
        ClientCommand::Stats { addr } => emit(&Client::connect(addr.as_str())?.stats()?, json),
        ClientCommand::Merge { addr } => emit(&Client::connect(addr.as_str())?.merge()?, json),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
