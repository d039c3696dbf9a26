//! Command-line front end: run searches, resume checkpoints, run the
//! ranking-fidelity study, brute-force tiny spaces, and export genomes.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage/configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gevonas::data::{gen_synthetic, load_cifar10_binary, Dataset};
use gevonas::engine::{Engine, EngineConfig, FitnessKind};
use gevonas::evaluators::SurrogateEvaluator;
use gevonas::harness::{parse_config, RankStudyConfig};
use gevonas::space::{count_block_genomes, InputShape, OpSet};
use gevonas::NetworkGenome;

#[derive(Parser)]
#[command(name = "gevonas", version, about = "Growth-based evolutionary architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonSearchArgs {
    /// Configuration file (flat `section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for logs, reports and checkpoints.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run a growth search and write log.csv, best.txt, best.dot, report.txt
    /// and checkpoint.bin into the output directory.
    Search(CommonSearchArgs),
    /// Resume a checkpointed search to completion.
    Resume {
        /// Checkpoint written by a previous `search` run.
        #[arg(long)]
        checkpoint: PathBuf,
        /// The config file of the original run (for dataset settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compare pruned-supernet ranking fidelity against a one-shot supernet.
    RankStudy(CommonSearchArgs),
    /// Exhaustively enumerate a tiny space (single-op set) and report the
    /// surrogate optimum; verifies it matches the planted target.
    Bruteforce {
        /// Blocks per network (kept small; the space is 180^B).
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        /// Surrogate target seed.
        #[arg(long, default_value_t = 1234)]
        target_seed: u64,
    },
    /// Score a genome text file with the surrogate.
    Eval {
        /// Genome file: one block per line, 49 space-separated integers.
        #[arg(long)]
        genome: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a genome text file as a DOT graph.
    ExportDot {
        #[arg(long)]
        genome: PathBuf,
        /// Total blocks of the skeleton the genome grows into.
        #[arg(long)]
        total_blocks: usize,
        /// Op set the genome is encoded against.
        #[arg(long, default_value = "vec4")]
        opset: String,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    /// Bad input from the user: config, flags, files. Exit code 2.
    Usage(String),
    /// Failure while running: search errors, IO mid-run. Exit code 1.
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Run(e.to_string())
}

/// Dataset settings consumed from the config file's `data.*` keys.
struct DataSettings {
    source: String,
    train_n: usize,
    val_n: usize,
    noise: f32,
    seed: u64,
    dir: Option<PathBuf>,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            train_n: 256,
            val_n: 128,
            noise: 0.25,
            seed: 9000,
            dir: None,
        }
    }
}

fn read_config(path: &Option<PathBuf>) -> Result<String, CliError> {
    match path {
        None => Ok(String::new()),
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| usage(format!("cannot read config {}: {e}", p.display()))),
    }
}

/// Parse the config into (engine config, data settings, leftover-free).
fn load_configs(text: &str) -> Result<(EngineConfig, DataSettings), CliError> {
    let mut f = parse_config(text).map_err(usage)?;
    let engine = gevonas::harness::engine_config_from(&mut f).map_err(usage)?;
    let data = data_settings_from(&mut f).map_err(usage)?;
    f.finish().map_err(usage)?;
    Ok((engine, data))
}

fn data_settings_from(
    f: &mut gevonas::harness::ConfigFile,
) -> Result<DataSettings, gevonas::harness::HarnessError> {
    let mut d = DataSettings::default();
    if let Some(v) = f.take("data.source") {
        d.source = v;
    }
    if let Some(v) = f.take_parsed("data.train_n")? {
        d.train_n = v;
    }
    if let Some(v) = f.take_parsed("data.val_n")? {
        d.val_n = v;
    }
    if let Some(v) = f.take_parsed("data.noise")? {
        d.noise = v;
    }
    if let Some(v) = f.take_parsed("data.seed")? {
        d.seed = v;
    }
    if let Some(v) = f.take("data.dir") {
        d.dir = Some(PathBuf::from(v));
    }
    Ok(d)
}

fn build_datasets(
    cfg: &EngineConfig,
    d: &DataSettings,
) -> Result<Option<(Dataset, Dataset)>, CliError> {
    if matches!(cfg.fitness, FitnessKind::Surrogate { .. }) {
        return Ok(None);
    }
    match d.source.as_str() {
        "synthetic" => {
            // One generation pass, then a split: train and validation must
            // come from the same class templates.
            let total = d.train_n + d.val_n;
            let all =
                gen_synthetic(cfg.classes, total, cfg.input, d.noise, d.seed).map_err(usage)?;
            let (train, val) = all
                .split(d.train_n as f64 / total as f64, d.seed ^ 0xD5A7)
                .map_err(usage)?;
            Ok(Some((train, val)))
        }
        "cifar10" => {
            let dir = d
                .dir
                .as_ref()
                .ok_or_else(|| usage("data.dir is required for data.source = cifar10"))?;
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let train = load_cifar10_binary(&batches).map_err(run_err)?;
            let val = load_cifar10_binary(&[dir.join("test_batch.bin")]).map_err(run_err)?;
            Ok(Some((train, val)))
        }
        other => Err(usage(format!(
            "unknown data.source {other:?} (expected synthetic or cifar10)"
        ))),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| run_err(format!("cannot write {}: {e}", path.display())))
}

fn finish_search(engine: &Engine, out_dir: &Path) -> Result<(), CliError> {
    let report = engine.final_report().map_err(run_err)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| run_err(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("log.csv"), engine.log_csv().as_bytes())?;
    write_file(&out_dir.join("best.txt"), report.best_genome.to_text().as_bytes())?;
    write_file(
        &out_dir.join("best.dot"),
        report.best_genome.export_dot(&engine.config().opset).as_bytes(),
    )?;
    write_file(&out_dir.join("checkpoint.bin"), &engine.checkpoint_bytes())?;
    let summary = format!(
        "config_digest = {:#018x}\nbest_acc = {:.6}\nbest_size = {:.1}\n\
         population_digest = {:#018x}\ngenerations = {}\n",
        report.config_digest,
        report.best_acc,
        report.best_size,
        report.population_digest,
        report.log.len()
    );
    write_file(&out_dir.join("report.txt"), summary.as_bytes())?;
    println!("{summary}");
    Ok(())
}

fn cmd_search(args: &CommonSearchArgs) -> Result<(), CliError> {
    let text = read_config(&args.config)?;
    let (mut cfg, data) = load_configs(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let datasets = build_datasets(&cfg, &data)?;
    let (train, val) = match datasets {
        Some((t, v)) => (Some(t), Some(v)),
        None => (None, None),
    };
    let mut engine = Engine::new(cfg, train, val).map_err(usage)?;
    engine.run().map_err(run_err)?;
    finish_search(&engine, &args.out_dir)
}

fn cmd_resume(checkpoint: &Path, config: &Option<PathBuf>, out_dir: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(checkpoint)
        .map_err(|e| usage(format!("cannot read checkpoint {}: {e}", checkpoint.display())))?;
    let text = read_config(config)?;
    let (cfg, data) = load_configs(&text)?;
    let datasets = build_datasets(&cfg, &data)?;
    let (train, val) = match datasets {
        Some((t, v)) => (Some(t), Some(v)),
        None => (None, None),
    };
    let mut engine = Engine::resume(&bytes, train, val).map_err(usage)?;
    if !engine.is_done() {
        engine.run().map_err(run_err)?;
    }
    finish_search(&engine, out_dir)
}

fn cmd_rank_study(args: &CommonSearchArgs) -> Result<(), CliError> {
    let text = read_config(&args.config)?;
    // Rank study consumes engine + rank keys; data keys parsed separately.
    let mut f = parse_config(&text).map_err(usage)?;
    let data = data_settings_from(&mut f).map_err(usage)?;
    let mut cfg = RankStudyConfig::from_config(&mut f).map_err(usage)?;
    f.finish().map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    cfg.engine.fitness = FitnessKind::SharedWeight;
    let (train, val) = build_datasets(&cfg.engine, &data)?
        .ok_or_else(|| usage("rank study requires shared-weight fitness"))?;
    let report = gevonas::harness::run_rank_study(&cfg, &train, &val).map_err(run_err)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| run_err(format!("cannot create {}: {e}", args.out_dir.display())))?;
    write_file(&args.out_dir.join("rank.csv"), report.csv().as_bytes())?;
    println!("{}", report.csv());
    println!(
        "pruned wins: {}/{} (mean tau {:.4} vs {:.4})",
        report.pruned_wins,
        report.outcomes.len(),
        report.mean_tau_pruned,
        report.mean_tau_oneshot
    );
    Ok(())
}

fn cmd_bruteforce(blocks: usize, target_seed: u64) -> Result<(), CliError> {
    if blocks == 0 || blocks > 2 {
        return Err(usage("bruteforce supports 1 or 2 blocks (the space is 180^B)"));
    }
    let opset = OpSet::id1();
    let shape = gevonas::ModelShape::new(
        InputShape::Vector { dim: 8 },
        8,
        4,
        gevonas::SkeletonSpec::new(blocks),
    );
    let surrogate = SurrogateEvaluator::new(shape, opset.clone(), target_seed);
    let per_block = count_block_genomes(&opset).map_err(run_err)?;
    println!("block space size: {per_block}");

    let all_blocks = gevonas::space::enumerate_blocks(&opset).map_err(run_err)?;
    let mut best: Option<(f64, NetworkGenome)> = None;
    let mut count = 0u64;
    let mut assemble = |blocks_choice: &[gevonas::BlockGenome]| {
        let g = NetworkGenome::new(blocks_choice.to_vec(), gevonas::SkeletonSpec::new(blocks))
            .expect("enumerated blocks are valid");
        let score = surrogate.score(&g);
        count += 1;
        if best.as_ref().map(|(s, _)| score > *s).unwrap_or(true) {
            best = Some((score, g));
        }
    };
    if blocks == 1 {
        for b in &all_blocks {
            assemble(&[*b]);
        }
    } else {
        for a in &all_blocks {
            for b in &all_blocks {
                assemble(&[*a, *b]);
            }
        }
    }
    let (score, genome) = best.expect("nonempty space");
    println!("networks scored: {count}");
    println!("best score: {score:.6}");
    println!("best genome:\n{}", genome.to_text());
    if &genome == surrogate.target() {
        println!("verified: exhaustive optimum equals the planted target");
        Ok(())
    } else {
        Err(run_err("exhaustive optimum does not match the planted target"))
    }
}

fn cmd_eval(genome_path: &Path, config: &Option<PathBuf>) -> Result<(), CliError> {
    let text = read_config(config)?;
    let (cfg, _) = load_configs(&text)?;
    let genome_text = std::fs::read_to_string(genome_path)
        .map_err(|e| usage(format!("cannot read genome {}: {e}", genome_path.display())))?;
    let genome = NetworkGenome::from_text(&genome_text, cfg.skeleton(), cfg.opset.op_count())
        .map_err(usage)?;
    let target_seed = match cfg.fitness {
        FitnessKind::Surrogate { target_seed } => target_seed,
        FitnessKind::SharedWeight => {
            return Err(usage("eval scores against the surrogate; set search.fitness = surrogate:<seed>"))
        }
    };
    let surrogate = SurrogateEvaluator::new(cfg.model_shape(), cfg.opset.clone(), target_seed);
    if !genome.is_complete() {
        return Err(usage(format!(
            "genome has {} blocks, skeleton needs {}",
            genome.len(),
            cfg.total_blocks
        )));
    }
    println!("score = {:.6}", surrogate.score(&genome));
    println!("params = {}", gevonas::space::param_count(&genome, &cfg.model_shape(), &cfg.opset));
    Ok(())
}

fn cmd_export_dot(
    genome_path: &Path,
    total_blocks: usize,
    opset_name: &str,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let opset = OpSet::by_name(opset_name).map_err(usage)?;
    let text = std::fs::read_to_string(genome_path)
        .map_err(|e| usage(format!("cannot read genome {}: {e}", genome_path.display())))?;
    let genome =
        NetworkGenome::from_text(&text, gevonas::SkeletonSpec::new(total_blocks), opset.op_count())
            .map_err(usage)?;
    let dot = genome.export_dot(&opset);
    match out {
        None => {
            print!("{dot}");
            Ok(())
        }
        Some(p) => write_file(p, dot.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Search(args) => cmd_search(args),
        Command::Resume { checkpoint, config, out_dir } => cmd_resume(checkpoint, config, out_dir),
        Command::RankStudy(args) => cmd_rank_study(args),
        Command::Bruteforce { blocks, target_seed } => cmd_bruteforce(*blocks, *target_seed),
        Command::Eval { genome, config } => cmd_eval(genome, config),
        Command::ExportDot { genome, total_blocks, opset, out } => {
            cmd_export_dot(genome, *total_blocks, opset, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
