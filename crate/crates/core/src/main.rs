use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Map, Value};

use adp_core::embfile::{load_embeddings, load_weights, save_embeddings};
use adp_core::flops::{
    calibrate, cost_table, episode_expected_flops, fraction_from_f64, preset, ReferenceCosts,
};
use adp_core::gate::gate_trace;
use adp_core::harness::{
    compare_random, extract_deltas, load_episode, run_episode, synth_episode, RunConfig, RunReport,
    SynthProfile, VisionInputs,
};
use adp_core::scoring::prune_pipeline;
use adp_core::stats::layer_stats;
use adp_core::{AdpError, Result, VERSION};

#[derive(Parser)]
#[command(name = "adp", version = VERSION, about = "Motion-gated visual token pruning: replay, scoring and cost tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay an episode through gate, selection and cost model.
    Simulate {
        #[arg(long)]
        episode: PathBuf,
        /// Projection weights; enables token selection on embeddings.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Embedding files (one, or one per window). Defaults to the episode header's list.
        #[arg(long, num_args = 1..)]
        embeddings: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window distances and gate decisions only.
    Gate {
        #[arg(long)]
        episode: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Importance scores and Top-K selection for one embedding file.
    Score {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the pruned sequence here.
        #[arg(long)]
        pruned_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost table over retention ratios.
    Flops {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated retention ratios.
        #[arg(long, default_value = "0.3,0.4,0.5,0.6,0.7")]
        rho_grid: String,
        /// Pruned fraction for an episode expectation.
        #[arg(long)]
        gamma: Option<f64>,
        /// Forwards per episode for the expectation.
        #[arg(long, default_value_t = 1)]
        forwards: u64,
        /// Fit sequence lengths and gamma to reference costs instead.
        #[arg(long)]
        fit: bool,
        /// Reference base cost for --fit, in units of 10^12.
        #[arg(long, default_value_t = 7.91)]
        fit_base: f64,
        /// Reference costs for --fit at each grid ratio, in units of 10^12.
        #[arg(long, default_value = "5.85,6.14,6.43,6.74,7.03")]
        fit_points: String,
        #[arg(long, default_value_t = 1024)]
        fit_max_l_vis: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Participation ratio and entropy per layer, as CSV.
    Stats {
        /// Text file with one layer of scores per line (whitespace or comma separated).
        #[arg(long, conflicts_with_all = ["embeddings", "weights"])]
        scores: Option<PathBuf>,
        #[arg(long, requires = "weights")]
        embeddings: Option<PathBuf>,
        #[arg(long, requires = "embeddings")]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Target retention of a uniform random pruner at the report's budgets.
    CompareRandom {
        /// A report written by `simulate`.
        #[arg(long)]
        report: PathBuf,
        /// Visual token count V.
        #[arg(long)]
        tokens: u64,
        /// Target count m.
        #[arg(long)]
        targets: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated target token indices, for ADP's own retention.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic episode log.
    Synth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "mixed")]
        profile: String,
        #[arg(long, default_value_t = 50)]
        windows: usize,
        #[arg(long, default_value_t = 8)]
        omega: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags named after config keys. Values given here win over `--config`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    third_case: Option<String>,
    #[arg(long)]
    cold_start_windows: Option<usize>,
    #[arg(long)]
    max_consecutive_pruned: Option<usize>,
    #[arg(long)]
    omega: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated view weights.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    scoring_layer: Option<usize>,
    #[arg(long)]
    euler_order: Option<String>,
    #[arg(long)]
    frame: Option<String>,
    /// Width preset name, e.g. llama2-7b-oft.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    d_model: Option<u64>,
    #[arg(long)]
    d_ff: Option<u64>,
    #[arg(long)]
    layers: Option<u64>,
    #[arg(long)]
    heads: Option<u64>,
    #[arg(long)]
    head_dim: Option<u64>,
    #[arg(long)]
    l_vis: Option<u64>,
    #[arg(long)]
    l_txt: Option<u64>,
    #[arg(long)]
    l_prop: Option<u64>,
    #[arg(long)]
    l_act: Option<u64>,
    /// The sequence has no trailing EOS token.
    #[arg(long)]
    no_eos: bool,
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| AdpError::InvalidArgument(format!("{what}: `{s}`: {e}")))
        })
        .collect()
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut root: Map<String, Value> = match &self.config {
            Some(path) => match serde_json::from_str(&fs::read_to_string(path)?) {
                Ok(Value::Object(m)) => m,
                Ok(_) => {
                    return Err(AdpError::Config {
                        path: String::new(),
                        message: "config must be a JSON object".into(),
                    })
                }
                Err(e) => {
                    return Err(AdpError::Parse {
                        line: e.line(),
                        message: e.to_string(),
                    })
                }
            },
            None => Map::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                root.insert(key.into(), v);
            }
        };
        set("rule", self.rule.clone().map(Value::from));
        set("tau", self.tau.map(Value::from));
        set("third_case", self.third_case.clone().map(Value::from));
        set(
            "cold_start_windows",
            self.cold_start_windows.map(Value::from),
        );
        set(
            "max_consecutive_pruned",
            self.max_consecutive_pruned.map(Value::from),
        );
        set("omega", self.omega.map(Value::from));
        set("rho", self.rho.map(Value::from));
        set(
            "alpha",
            self.alpha
                .as_deref()
                .map(|a| parse_list(a, "alpha"))
                .transpose()?
                .map(Value::from),
        );
        set("scoring_layer", self.scoring_layer.map(Value::from));
        set("euler_order", self.euler_order.clone().map(Value::from));
        set("frame", self.frame.clone().map(Value::from));

        let dims_flags = [
            ("preset", self.preset.clone().map(Value::from)),
            ("d_model", self.d_model.map(Value::from)),
            ("d_ff", self.d_ff.map(Value::from)),
            ("layers", self.layers.map(Value::from)),
            ("heads", self.heads.map(Value::from)),
            ("head_dim", self.head_dim.map(Value::from)),
            ("l_vis", self.l_vis.map(Value::from)),
            ("l_txt", self.l_txt.map(Value::from)),
            ("l_prop", self.l_prop.map(Value::from)),
            ("l_act", self.l_act.map(Value::from)),
            ("eos", self.no_eos.then_some(Value::Bool(false))),
        ];
        if dims_flags.iter().any(|(_, v)| v.is_some()) {
            let dims = root.entry("dims").or_insert_with(|| json!({}));
            if let Value::Object(d) = dims {
                for (k, v) in dims_flags {
                    if let Some(v) = v {
                        d.insert(k.into(), v);
                    }
                }
            }
        }
        RunConfig::from_json(&Value::Object(root).to_string())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn simulate(
    episode: &Path,
    weights: Option<&Path>,
    embeddings: &[PathBuf],
    cfg: &RunConfig,
) -> Result<RunReport> {
    let log = load_episode(episode)?;
    let vision = match weights {
        Some(w) => {
            let files = if embeddings.is_empty() {
                log.embedding_paths()
            } else {
                embeddings.to_vec()
            };
            if files.is_empty() {
                return Err(AdpError::InvalidArgument(
                    "--weights given but no embedding files (flag or episode header)".into(),
                ));
            }
            Some(VisionInputs::load(w, &files)?)
        }
        None if !embeddings.is_empty() => {
            return Err(AdpError::InvalidArgument(
                "--embeddings needs --weights".into(),
            ))
        }
        None => None,
    };
    info!(
        "replaying {} windows of {}",
        log.window_count(),
        log.omega()
    );
    run_episode(&log, cfg, vision.as_ref())
}

fn stats_csv(rows: &[adp_core::stats::LayerStats]) -> String {
    let mut s = String::from("layer,tokens,pr,entropy_nats,entropy_bits\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.layer, r.tokens, r.participation_ratio, r.entropy_nats, r.entropy_bits
        ));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            episode,
            weights,
            embeddings,
            config,
            out,
        } => {
            let report = simulate(&episode, weights.as_deref(), &embeddings, &config.load()?)?;
            emit(out.as_deref(), &report.to_json())
        }
        Command::Gate {
            episode,
            config,
            out,
        } => {
            let cfg = config.load()?;
            let log = load_episode(&episode)?;
            if let Some(o) = cfg.omega.filter(|&o| o != log.omega()) {
                return Err(AdpError::InvalidArgument(format!(
                    "config omega {o} does not match the episode's omega {}",
                    log.omega()
                )));
            }
            let deltas = extract_deltas(&log, cfg.fk_convention())?;
            let trace = gate_trace(&deltas, &cfg.gate_config(log.omega())?)?;
            let windows: Vec<Value> = deltas
                .iter()
                .zip(&trace.decisions)
                .enumerate()
                .map(|(i, (d, s))| {
                    json!({"index": i + 1, "delta": adp_core::harness::report::round_sig6(*d), "decision": s})
                })
                .collect();
            let doc = json!({
                "windows": windows,
                "pruned_windows": trace.pruned,
                "gamma": adp_core::harness::report::round_sig6(trace.gamma),
            });
            emit(out.as_deref(), &pretty(&doc))
        }
        Command::Score {
            embeddings,
            weights,
            config,
            pruned_out,
            out,
        } => {
            let cfg = config.load()?;
            let emb = load_embeddings(&embeddings)?;
            let w = load_weights(&weights)?;
            let alpha = cfg.alpha_for(emb.view_lengths().len())?;
            let outcome = prune_pipeline(&emb, &w, cfg.rho, &alpha)?;
            if let Some(p) = pruned_out {
                save_embeddings(p, &outcome.pruned)?;
            }
            let d = &outcome.decision;
            let doc = json!({
                "rho": d.rho,
                "alpha": d.alpha,
                "view_lengths": d.view_lengths,
                "k": d.k,
                "k_per_view": d.k_per_view,
                "kept": d.global_indices(),
                "importance": outcome.importance.values,
                "pruned_rows": outcome.pruned.rows(),
            });
            emit(out.as_deref(), &pretty(&doc))
        }
        Command::Flops {
            config,
            rho_grid,
            gamma,
            forwards,
            fit,
            fit_base,
            fit_points,
            fit_max_l_vis,
            out,
        } => {
            let cfg = config.load()?;
            let grid = parse_list(&rho_grid, "rho-grid")?;
            if fit {
                let name = cfg
                    .dims
                    .as_ref()
                    .and_then(|d| d.preset.clone())
                    .unwrap_or_else(|| "llama2-7b-oft".into());
                let targets = parse_list(&fit_points, "fit-points")?;
                if targets.len() != grid.len() {
                    return Err(AdpError::InvalidArgument(format!(
                        "{} reference points for {} ratios",
                        targets.len(),
                        grid.len()
                    )));
                }
                let refs = ReferenceCosts {
                    base: fit_base * 1e12,
                    points: grid
                        .iter()
                        .zip(&targets)
                        .map(|(&r, &c)| (r, c * 1e12))
                        .collect(),
                };
                let report = calibrate(&preset(&name)?, &refs, fit_max_l_vis)?;
                return emit(out.as_deref(), &pretty(&report));
            }
            let dims = cfg.resolve_dims(None)?;
            let rows = cost_table(&dims, &grid)?;
            let mut doc = json!({ "dims": dims, "rows": rows });
            if let Some(g) = gamma {
                let gamma = fraction_from_f64(g)?;
                let episodes: Vec<Value> = grid
                    .iter()
                    .map(|&rho| {
                        let e = episode_expected_flops(&dims, rho, gamma, forwards)?;
                        Ok(json!({
                            "rho": rho,
                            "base_total": e.base_total,
                            "expected": e.expected.to_integer(),
                            "savings": e.savings.to_integer(),
                            "expected_exact": e.expected.to_string(),
                        }))
                    })
                    .collect::<Result<_>>()?;
                doc["gamma"] = json!(g);
                doc["forwards"] = json!(forwards);
                doc["episode"] = Value::Array(episodes);
            }
            emit(out.as_deref(), &pretty(&doc))
        }
        Command::Stats {
            scores,
            embeddings,
            weights,
            out,
        } => {
            let rows = match (scores, embeddings, weights) {
                (Some(path), _, _) => fs::read_to_string(path)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .enumerate()
                    .map(|(layer, line)| {
                        let phi = line
                            .split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|s| !s.is_empty())
                            .map(|s| {
                                s.parse::<f64>().map_err(|e| AdpError::Parse {
                                    line: layer + 1,
                                    message: format!("`{s}`: {e}"),
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        layer_stats(layer, &phi)
                    })
                    .collect::<Result<Vec<_>>>()?,
                (None, Some(e), Some(w)) => {
                    let phi = adp_core::scoring::score_importance(
                        &load_embeddings(e)?,
                        &load_weights(w)?,
                    )?;
                    vec![layer_stats(0, &phi.values)?]
                }
                _ => {
                    return Err(AdpError::InvalidArgument(
                        "give --scores, or --embeddings with --weights".into(),
                    ))
                }
            };
            emit(out.as_deref(), &stats_csv(&rows))
        }
        Command::CompareRandom {
            report,
            tokens,
            targets,
            trials,
            seed,
            mask,
            out,
        } => {
            let report = RunReport::from_json(&fs::read_to_string(report)?)?;
            let mask = mask
                .map(|m| {
                    m.split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<usize>()
                                .map_err(|e| AdpError::InvalidArgument(format!("mask `{s}`: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let cmp = compare_random(&report, tokens, targets, trials, seed, mask.as_deref())?;
            emit(out.as_deref(), &pretty(&cmp))
        }
        Command::Synth {
            seed,
            profile,
            windows,
            omega,
            out,
        } => {
            let profile: SynthProfile = profile.parse()?;
            let log = synth_episode(seed, profile, windows, omega)?;
            emit(out.as_deref(), &log.to_jsonl())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
