//! `gmlab`: sampling, forward passes, continuum limits, convergence sweeps,
//! training and bound evaluation from a JSON experiment config.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Value, json};

use gmlab_core::cmpnn::cmpnn_forward;
use gmlab_core::harness::{
    self, bound_report, compare::write_comparison, config_arch_meta, load_weights, run_comparison, run_convergence,
    train_and_bound, with_jobs,
};
use gmlab_core::mpnn::WeightsFile;
use gmlab_core::rng::{Role, stream, stream_seed};
use gmlab_core::sampler::{generate_dataset, load_dataset, sample_mixture, save_dataset};
use gmlab_core::train::predict_logits;
use gmlab_core::{Error, ExperimentConfig, GraphonFamily, SignalFamily};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_OTHER: u8 = 1;

fn long_version() -> &'static str {
    concat!(
        env!("CARGO_PKG_VERSION"),
        "\npackage: ",
        env!("CARGO_PKG_NAME"),
        "\nconfig schema: 1",
        "\nbuild profile: ",
        env!("GMLAB_BUILD_PROFILE"),
        "\ntarget: ",
        env!("GMLAB_BUILD_TARGET"),
    )
}

#[derive(Parser, Debug)]
#[command(name = "gmlab", version, long_version = long_version(), about = "Graphon MPNN convergence and generalization experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON, `"schema": 1`); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and GMLAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; overrides the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker cap for parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw labelled graph-signals from the configured mixture (JSON).
    Sample {
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Fixed node count instead of the configured size law.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate a train/test dataset container plus its JSON sidecar.
    GenDataset {
        /// Number of graphs (defaults to `train.m`).
        #[arg(long)]
        m: Option<usize>,
        /// Strip the latent node positions from the container.
        #[arg(long)]
        no_latents: bool,
    },
    /// Classifier logits of a GraphSage model on a dataset (CSV).
    Forward {
        #[arg(long)]
        dataset: PathBuf,
        /// Weights file; a seeded initialization when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Continuum-limit output of the configured network on a graphon (JSON).
    Climit {
        #[arg(long, default_value = "sbm_smooth")]
        graphon: String,
        /// Defaults to the graphon's benchmark signal.
        #[arg(long)]
        signal: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = gmlab_core::cmpnn::DEFAULT_RESOLUTION)]
        resolution: usize,
    },
    /// Monte Carlo convergence sweep (CSV); slopes go to `<out>.slopes.csv` or stderr.
    Converge,
    /// Train one model, write its weights (JSON) and print the bound report to stderr.
    Train,
    /// Evaluate every bound constant and bound for the configured architecture (JSON).
    Bounds {
        /// Dataset for the baseline bounds and the measured gap.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train under every comparison condition and write the tables (CSV directory).
    Compare,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (`gmlab ... | head`) is not a failure.
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_OTHER,
            })
        }
    }
}

fn run(cli: Cli) -> gmlab_core::Result<()> {
    let cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.global.seed)?;
    let out = cli.global.out.clone().or_else(|| cfg.output.clone());
    with_jobs(cli.global.jobs, move || dispatch(cli.command, &cfg, seed, out.as_deref()))?
}

fn dispatch(command: Command, cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> gmlab_core::Result<()> {
    match command {
        Command::Sample { count, n } => {
            let mix = cfg.mixture.build()?;
            if n.is_some_and(|n| n == 0) {
                return Err(Error::Config("--n must be at least 1".into()));
            }
            let graphs = (0..count)
                .map(|i| {
                    let gs = sample_mixture(&mix, n, cfg.mixture.sample_options(), &mut stream(seed, i as u64, Role::Graph))?;
                    Ok(json!({
                        "index": i,
                        "label": gs.label,
                        "nodes": gs.n_nodes(),
                        "edges": gs.adjacency.edge_count(),
                        "edge_density": gs.edge_density(),
                        "alpha": gs.alpha,
                        "neighbors": (0..gs.n_nodes()).map(|v| gs.adjacency.neighbors(v).collect::<Vec<_>>()).collect::<Vec<_>>(),
                        "features": gs.features.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                        "latents": gs.latents,
                    }))
                })
                .collect::<gmlab_core::Result<Vec<Value>>>()?;
            write_json(out, &Value::Array(graphs))
        }
        Command::GenDataset { m, no_latents } => {
            let path = out.ok_or_else(|| Error::Config("gen-dataset needs --out".into()))?;
            let mix = cfg.mixture.build()?;
            let ds = generate_dataset(
                &mix,
                m.unwrap_or(cfg.train.m),
                cfg.train.train_frac,
                stream_seed(seed, 0, Role::Graph),
                cfg.mixture.sample_options(),
            )?;
            save_dataset(&ds, path, !no_latents)?;
            eprintln!("wrote {} graphs ({} train, {} test) to {}", ds.len(), ds.split.train.len(), ds.split.test.len(), path.display());
            Ok(())
        }
        Command::Forward { dataset, weights } => {
            let ds = load_dataset(&dataset)?;
            let (w, aggregation) = match weights {
                Some(p) => {
                    let f = load_weights(&p)?;
                    (f.weights(), f.aggregation)
                }
                None => (cfg.arch.weights(seed)?, cfg.arch.aggregation),
            };
            let graphs: Vec<_> = ds.samples.iter().collect();
            let logits = predict_logits(&w, &graphs, aggregation, cfg.arch.relu)?;
            let mut sink = harness::csv_writer(open_out(out)?);
            let classes = logits.ncols();
            let mut header = vec!["index".to_string(), "label".to_string()];
            header.extend((1..=classes).map(|k| format!("logit_{k}")));
            header.push("prediction".into());
            sink.write_record(&header)?;
            for (i, row) in logits.rows().into_iter().enumerate() {
                let pred = row.iter().enumerate().fold(0, |best, (k, v)| if *v > row[best] { k } else { best }) + 1;
                let mut rec = vec![i.to_string(), ds.samples[i].label.map(|l| l.to_string()).unwrap_or_default()];
                rec.extend(row.iter().map(|v| v.to_string()));
                rec.push(pred.to_string());
                sink.write_record(&rec)?;
            }
            sink.flush()?;
            Ok(())
        }
        Command::Climit { graphon, signal, weights, resolution } => {
            let family: GraphonFamily = parse_name(&graphon, "graphon")?;
            let sig = match signal {
                Some(s) => parse_name::<SignalFamily>(&s, "signal")?,
                None => family.default_signal(),
            };
            let (w, aggregation) = match weights {
                Some(p) => {
                    let f = load_weights(&p)?;
                    (f.weights(), f.aggregation)
                }
                None => (cfg.arch.weights(seed)?, cfg.arch.aggregation),
            };
            let arch = w.arch(aggregation, cfg.arch.relu)?;
            let res = cmpnn_forward(&family.build(), &sig.build(), &arch, resolution)?;
            write_json(out, &serde_json::to_value(res)?)
        }
        Command::Converge => {
            let result = run_convergence(cfg, seed)?;
            for w in dedup(&result.warnings) {
                eprintln!("warning: {w}");
            }
            match out {
                Some(path) => {
                    result.write_csv(BufWriter::new(File::create(path)?))?;
                    let mut slopes = path.as_os_str().to_owned();
                    slopes.push(".slopes.csv");
                    result.write_slopes_csv(BufWriter::new(File::create(PathBuf::from(slopes))?))?;
                }
                None => {
                    result.write_csv(io::stdout().lock())?;
                    for s in &result.slopes {
                        eprintln!("alpha = {}: log-log slope of the median distance = {:.4}", s.alpha, s.slope);
                    }
                }
            }
            Ok(())
        }
        Command::Train => {
            let (weights, report) = train_and_bound(cfg, seed)?;
            let meta = json!({ "seed": seed, "depth": weights.depth(), "weight_decay": cfg.train.weight_decay });
            let file = WeightsFile::new(&weights, cfg.arch.aggregation, meta);
            write_json(out, &serde_json::to_value(file)?)?;
            eprintln!("{}", serde_json::to_string_pretty(&report.to_json())?);
            Ok(())
        }
        Command::Bounds { dataset } => {
            let (meta, weights) = config_arch_meta(cfg, seed)?;
            let ds = dataset.map(|p| load_dataset(&p)).transpose()?;
            let report = bound_report(cfg, &meta, weights.as_ref(), ds.as_ref())?;
            write_json(out, &report.to_json())
        }
        Command::Compare => {
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("compare"));
            let tables = run_comparison(cfg, seed)?;
            for path in write_comparison(&tables, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn parse_name<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> gmlab_core::Result<T> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| Error::Config(format!("unknown {what} {name:?}")))
}

fn dedup(items: &[String]) -> Vec<&String> {
    let mut seen = std::collections::BTreeSet::new();
    items.iter().filter(|s| seen.insert(s.as_str())).collect()
}

fn open_out(out: Option<&Path>) -> gmlab_core::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(out: Option<&Path>, value: &Value) -> gmlab_core::Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
