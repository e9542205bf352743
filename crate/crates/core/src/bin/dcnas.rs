use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcnas::artifacts::{load_results, save_json, write_atomic, OracleTable};
use dcnas::compare::compare_strategies;
use dcnas::config::{ExperimentConfig, SearchMode};
use dcnas::pipeline::{
    build_oracle, prepare, run_pipeline, run_pipeline_until, PipelineOptions, Stage,
};
use dcnas::selection::{fidelity_mse, ranking_score, EvalRecord};
use dcnas::supernet::{sample_archs, train_supernet, SupernetCheckpoint, SupernetState};
use dcnas::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dcnas",
    version,
    about = "Divide-and-conquer architecture search at desk scale"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; defaults to the first seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fully train every architecture of the space.
    Oracle {
        /// Build one oracle per configured seed under `OUT/seed-N/`.
        #[arg(long)]
        all_seeds: bool,
    },
    /// Run the whole search.
    Pipeline {
        /// Oracle CSV used for ranking statistics and the baseline.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Stop after this stage, leaving resumable artifacts.
        #[arg(long, value_enum)]
        stop_after: Option<StageArg>,
    },
    /// Grid over K and eta against per-seed oracles.
    Compare {
        /// Directory holding `seed-N/oracle.csv` (or `oracle.csv` for a
        /// single seed).
        #[arg(long)]
        oracle_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<usize>>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
    },
    /// Sample, early-train and featurize.
    Features,
    /// Run up to clustering.
    Cluster,
    /// Run up to champion selection.
    Select,
    /// Train the super-network and write its checkpoint.
    SupernetTrain,
    /// Sample architectures from the trained super-network.
    SupernetSample {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Ranking score and fidelity of a results CSV with known accuracies.
    Rankscore {
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Supernet,
    Sample,
    EarlyTrain,
    Features,
    Cluster,
    Select,
    Merge,
    Baseline,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Supernet => Stage::Supernet,
            StageArg::Sample => Stage::Sample,
            StageArg::EarlyTrain => Stage::EarlyTrain,
            StageArg::Features => Stage::Features,
            StageArg::Cluster => Stage::Cluster,
            StageArg::Select => Stage::Select,
            StageArg::Merge => Stage::Merge,
            StageArg::Baseline => Stage::Baseline,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("dcnas: stage `{stage}` failed: {e}"),
                None => eprintln!("dcnas: {e}"),
            }
            ExitCode::from(if e.stage().is_some() { 2 } else { 1 })
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = g.workers {
        cfg.worker_count = w;
    }
    Ok(cfg)
}

fn root_seed(g: &Global, cfg: &ExperimentConfig) -> u64 {
    g.seed.unwrap_or(cfg.seeds[0])
}

fn options(g: &Global, oracle: Option<OracleTable>) -> PipelineOptions {
    PipelineOptions {
        out_dir: Some(g.out.clone()),
        oracle,
        workers: g.workers,
    }
}

fn stage_until(g: &Global, stage: Stage) -> Result<()> {
    let cfg = load_config(g)?;
    let seed = root_seed(g, &cfg);
    run_pipeline_until(&cfg, seed, &options(g, None), stage)?;
    println!("stage `{}` complete in {}", stage.name(), g.out.display());
    Ok(())
}

fn trained_supernet(cfg: &ExperimentConfig, seed: u64) -> Result<SupernetState> {
    if cfg.mode != SearchMode::Supernet {
        return Err(Error::config(
            "set \"mode\": \"supernet\" to train a super-network",
        ));
    }
    let prepared = prepare(cfg, seed)?;
    let mut state = SupernetState::new(&cfg.space, seed)?;
    train_supernet(
        &mut state,
        &prepared.reduced,
        cfg.supernet.epochs,
        cfg.supernet.warmup,
        seed,
        &cfg.supernet.settings,
    )?;
    Ok(state)
}

fn oracle_path(dir: &Path, seed: u64, single: bool) -> PathBuf {
    let per_seed = dir.join(format!("seed-{seed}")).join("oracle.csv");
    if single && !per_seed.exists() {
        dir.join("oracle.csv")
    } else {
        per_seed
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Oracle { all_seeds } => {
            let cfg = load_config(g)?;
            let seeds = if all_seeds {
                cfg.seeds.clone()
            } else {
                vec![root_seed(g, &cfg)]
            };
            for seed in seeds {
                let prepared = prepare(&cfg, seed)?;
                let table = build_oracle(
                    &cfg.space,
                    &prepared.d,
                    cfg.full_epochs,
                    seed,
                    &cfg.train,
                    cfg.worker_count,
                )?;
                let path = if all_seeds {
                    g.out.join(format!("seed-{seed}")).join("oracle.csv")
                } else {
                    g.out.join("oracle.csv")
                };
                table.save_csv(&path)?;
                let best = table.best();
                println!(
                    "seed {seed}: best {} y = {:.4} ({})",
                    best.arch,
                    best.y,
                    path.display()
                );
            }
        }
        Command::Pipeline { oracle, stop_after } => {
            let cfg = load_config(g)?;
            let seed = root_seed(g, &cfg);
            let oracle = oracle
                .map(|p| OracleTable::load_csv(&p, &cfg.space))
                .transpose()?;
            let opts = options(g, oracle);
            match stop_after {
                Some(stage) => {
                    run_pipeline_until(&cfg, seed, &opts, stage.into())?;
                    println!("stopped after `{}`", Stage::from(stage).name());
                }
                None => {
                    let outcome = run_pipeline(&cfg, seed, &opts)?;
                    let s = &outcome.summary;
                    println!(
                        "winner {} y = {:.4} after {} full trainings; artifacts in {}",
                        s.winner,
                        s.winner_y,
                        s.full_trainings,
                        g.out.display()
                    );
                }
            }
        }
        Command::Compare {
            oracle_dir,
            ks,
            etas,
            repeats,
        } => {
            let cfg = load_config(g)?;
            let single = cfg.seeds.len() == 1;
            let mut oracles = BTreeMap::new();
            for &seed in &cfg.seeds {
                let path = oracle_path(&oracle_dir, seed, single);
                if !path.exists() {
                    return Err(Error::config(format!(
                        "missing oracle {} for seed {seed}; run `dcnas oracle` first",
                        path.display()
                    )));
                }
                oracles.insert(seed, OracleTable::load_csv(&path, &cfg.space)?);
            }
            let etas = etas.unwrap_or_else(|| vec![cfg.eta]);
            let report = compare_strategies(&cfg, &oracles, &ks, &etas, repeats, cfg.worker_count)?;
            let table = report.render_table();
            std::fs::create_dir_all(&g.out).map_err(|e| Error::Io {
                path: g.out.clone(),
                source: e,
            })?;
            report.save_csv(&g.out.join("compare.csv"))?;
            save_json(&g.out.join("compare.json"), &report)?;
            write_atomic(&g.out.join("compare.txt"), table.as_bytes())?;
            print!("{table}");
        }
        Command::Features => stage_until(g, Stage::Features)?,
        Command::Cluster => stage_until(g, Stage::Cluster)?,
        Command::Select => stage_until(g, Stage::Select)?,
        Command::SupernetTrain => {
            let cfg = load_config(g)?;
            let state = trained_supernet(&cfg, root_seed(g, &cfg))?;
            let ck = state.checkpoint();
            save_json(&g.out.join("supernet.json"), &ck)?;
            for (b, p) in state.probabilities().iter().enumerate() {
                let cells: Vec<String> = p.iter().map(|v| format!("{v:.3}")).collect();
                println!("block {b}: {}", cells.join(" "));
            }
            println!("weights {}", ck.weight_digest);
        }
        Command::SupernetSample { count } => {
            let cfg = load_config(g)?;
            let seed = root_seed(g, &cfg);
            let state = trained_supernet(&cfg, seed)?;
            let ck_path = g.out.join("supernet.json");
            if ck_path.exists() {
                let ck: SupernetCheckpoint = dcnas::artifacts::load_json(&ck_path)?;
                if ck.weight_digest != state.weight_digest() {
                    return Err(Error::config(
                        "supernet.json was produced by a different configuration",
                    ));
                }
            }
            let codes = sample_archs(&state, count.unwrap_or(cfg.s), seed)?;
            let text: String = codes
                .iter()
                .map(|c| cfg.space.format_arch(c) + "\n")
                .collect();
            write_atomic(&g.out.join("samples.txt"), text.as_bytes())?;
            print!("{text}");
        }
        Command::Rankscore { results } => {
            let path = results.unwrap_or_else(|| g.out.join("results.csv"));
            let rows = load_results(&path)?;
            let records: Vec<EvalRecord> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.y.is_some())
                .map(|(i, r)| EvalRecord {
                    arch_id: i as u128,
                    e: r.e,
                    y: r.y,
                    cluster: r.cluster,
                })
                .collect();
            let rs = ranking_score(&records)?;
            println!(
                "ranking score {:.4} (concordance {} over {} untied pairs; raw sum {})",
                rs.normalized, rs.concordance, rs.pairs, rs.raw
            );
            println!("fidelity mse {:.6}", fidelity_mse(&records)?);
        }
    }
    Ok(())
}
