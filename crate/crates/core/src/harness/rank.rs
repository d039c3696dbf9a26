//! Ranking-fidelity study: does the progressively pruned supernet rank
//! candidate networks closer to their train-from-scratch ground truth than a
//! one-shot supernet trained with the same budget but no pruning?
//!
//! Per seed: run the growth search; train a fresh one-shot supernet on the
//! same number of epochs; draw `networks` distinct complete genomes that the
//! pruned supernet can still evaluate (final population plus variation
//! offspring, the candidates the search would propose next); score all of
//! them with both supernets and with scratch training averaged over
//! independent initializations; report the Kendall tau of each supernet's
//! ranking against the scratch ranking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stats::kendall_tau;
use super::HarnessError;
use crate::data::Dataset;
use crate::engine::{Engine, EngineConfig, FitnessKind};
use crate::evaluators::ScratchEvaluator;
use crate::genome::NetworkGenome;
use crate::supernet::{CosineSchedule, SampleMode, SuperNet, TrainOptions};

#[derive(Debug, Clone)]
pub struct RankStudyConfig {
    /// Search settings; `seed` and `fitness` are overridden per study seed.
    pub engine: EngineConfig,
    /// Candidate networks ranked per seed.
    pub networks: usize,
    pub seeds: Vec<u64>,
    /// Scratch-training epochs for the ground-truth accuracies.
    pub scratch_epochs: usize,
    /// Independent scratch trainings averaged per candidate; more repeats
    /// suppress initialization noise in the ground-truth ranking.
    pub scratch_repeats: usize,
}

impl RankStudyConfig {
    pub fn desk_default() -> Self {
        Self {
            engine: EngineConfig::desk_default(),
            networks: 16,
            seeds: vec![0, 1, 2],
            scratch_epochs: 10,
            scratch_repeats: 1,
        }
    }

    /// Parse from config text: engine keys plus `rank.networks`,
    /// `rank.seeds` (comma-separated) and `rank.scratch_epochs`.
    pub fn from_config_text(text: &str) -> Result<Self, HarnessError> {
        let mut f = super::config::parse_config(text)?;
        let cfg = Self::from_config(&mut f)?;
        f.finish()?;
        Ok(cfg)
    }

    /// Consume engine and rank keys from an already parsed file; leftover
    /// keys stay for the caller.
    pub fn from_config(f: &mut super::config::ConfigFile) -> Result<Self, HarnessError> {
        let engine = super::config::engine_config_from(f)?;
        let mut cfg = Self { engine, ..Self::desk_default() };
        if let Some(v) = f.take_parsed("rank.networks")? {
            cfg.networks = v;
        }
        if let Some(v) = f.take_parsed("rank.scratch_epochs")? {
            cfg.scratch_epochs = v;
        }
        if let Some(v) = f.take_parsed("rank.scratch_repeats")? {
            cfg.scratch_repeats = v;
        }
        if let Some(v) = f.take("rank.seeds") {
            let seeds: Result<Vec<u64>, _> = v.split(',').map(|s| s.trim().parse()).collect();
            cfg.seeds = seeds.map_err(|_| HarnessError::BadValue {
                key: "rank.seeds".into(),
                value: v,
                reason: "expected comma-separated integers".into(),
            })?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub tau_pruned: f64,
    pub tau_oneshot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankStudyReport {
    pub outcomes: Vec<SeedOutcome>,
    pub mean_tau_pruned: f64,
    pub mean_tau_oneshot: f64,
    /// Seeds where the pruned supernet ranked at least as faithfully as the
    /// one-shot supernet.
    pub pruned_wins: usize,
}

impl RankStudyReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("seed,tau_pruned,tau_oneshot\n");
        for o in &self.outcomes {
            out.push_str(&format!("{},{:.6},{:.6}\n", o.seed, o.tau_pruned, o.tau_oneshot));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6}\n",
            self.mean_tau_pruned, self.mean_tau_oneshot
        ));
        out
    }
}

/// Replace each present edge op with the weakest op (code 1: the zero op in
/// the multi-op sets) independently with probability `zero_prob`, keeping
/// the connectivity pattern valid.
fn degrade_block(
    b: &crate::genome::BlockGenome,
    zero_prob: f64,
    op_count: u8,
    rng: &mut ChaCha8Rng,
) -> crate::genome::BlockGenome {
    use crate::genome::NODES;
    use rand::Rng;
    let mut m = [[0u8; NODES]; NODES];
    for dest in 0..NODES {
        for src in 0..dest {
            let code = b.op_code(dest, src);
            m[dest][src] =
                if code != 0 && rng.random_bool(zero_prob) { 1 } else { code };
        }
    }
    crate::genome::BlockGenome::from_matrix(m, op_count).expect("connectivity unchanged")
}

/// Candidate genomes the pruned supernet can evaluate, stratified across the
/// quality spectrum so rank fidelity is measured on networks that genuinely
/// differ: the final population (elite), variation offspring of it (the
/// proposals the search would score next), uniform samples from the allowed
/// space, and degraded samples whose unrestricted blocks are partly zeroed
/// out (known-weak controls). Deduplicated; uniform samples top up any
/// stratum that stalls.
fn draw_candidates(
    supernet: &SuperNet,
    population: &[NetworkGenome],
    opset: &crate::space::OpSet,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NetworkGenome>, HarnessError> {
    use crate::supernet::PruneState;
    let mut out: Vec<NetworkGenome> = Vec::with_capacity(n);
    let mut seen = std::collections::BTreeSet::new();
    let mut pool: crate::selection::Population = Vec::new();
    for g in population {
        if g.is_complete() && seen.insert(g.canonical_hash()) {
            if out.len() < n {
                out.push(g.clone());
            }
            pool.push(crate::selection::Individual::new(g.clone()));
        }
    }

    // Offspring stratum: roughly a quarter of the remaining slots.
    let offspring_target = out.len() + n.saturating_sub(out.len()) / 4;
    let params = crate::variation::VariationParams::default();
    let mut rounds = 0usize;
    while out.len() < offspring_target && !pool.is_empty() && rounds < n * 20 {
        rounds += 1;
        for child in crate::variation::generate_offspring_flat(&pool, opset, params, rng)? {
            let g = child.genome;
            if out.len() < offspring_target
                && g.is_complete()
                && supernet.path_allowed(&g).is_ok()
                && seen.insert(g.canonical_hash())
            {
                out.push(g);
            }
        }
    }

    // Degraded stratum: half of what remains, cycling through degradation
    // strengths. Only unrestricted blocks are touched so the path stays
    // inside the pruned space.
    let degraded_target = out.len() + n.saturating_sub(out.len()) / 2;
    let strengths = [0.3, 0.5, 0.8];
    let mut attempts = 0usize;
    let mut k = 0usize;
    while out.len() < degraded_target && attempts < n * 200 {
        attempts += 1;
        let mut g = supernet.sample_path(SampleMode::WarmUp, rng)?;
        let q = strengths[k % strengths.len()];
        for i in 0..g.len() {
            if matches!(supernet.prune_state()[i], PruneState::Free) {
                let weak = degrade_block(g.block(i), q, opset.op_count(), rng);
                g.replace_block(i, weak);
            }
        }
        if seen.insert(g.canonical_hash()) {
            out.push(g);
            k += 1;
        }
    }

    // Uniform stratum fills whatever is left.
    let mut attempts = 0usize;
    while out.len() < n {
        let g = supernet.sample_path(SampleMode::WarmUp, rng)?;
        attempts += 1;
        if seen.insert(g.canonical_hash()) {
            out.push(g);
        } else if attempts > n * 200 {
            // Heavily pruned spaces can hold fewer than n distinct genomes.
            break;
        }
    }
    if out.len() < 2 {
        return Err(HarnessError::TooFewNetworks(out.len()));
    }
    Ok(out)
}

pub fn run_rank_study(
    cfg: &RankStudyConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<RankStudyReport, HarnessError> {
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut engine_cfg = cfg.engine.clone();
        engine_cfg.seed = seed;
        engine_cfg.fitness = FitnessKind::SharedWeight;

        // Growth search with progressive pruning.
        let mut engine = Engine::new(engine_cfg.clone(), Some(train.clone()), Some(val.clone()))?;
        engine.run()?;
        let population: Vec<NetworkGenome> =
            engine.population().iter().map(|i| i.genome.clone()).collect();
        let pruned = engine.into_supernet().expect("shared-weight mode");

        // One-shot baseline: same epoch budget, uniform sampling, no pruning.
        let total_epochs =
            engine_cfg.warmup_epochs + engine_cfg.total_generations() * engine_cfg.stage_epochs;
        let bpe = train.len().div_ceil(engine_cfg.batch_size);
        let opts = TrainOptions {
            batch_size: engine_cfg.batch_size,
            lr_max: engine_cfg.lr_max,
            momentum: engine_cfg.momentum,
            weight_decay: engine_cfg.weight_decay,
        };
        let mut oneshot =
            SuperNet::init(engine_cfg.model_shape(), engine_cfg.opset.clone(), seed);
        let mut schedule = CosineSchedule::new(total_epochs * bpe);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5de6_34c2_8f1a_77b1);
        oneshot.train(train, total_epochs, SampleMode::WarmUp, &opts, &mut schedule, &mut rng)?;

        let candidates =
            draw_candidates(&pruned, &population, &engine_cfg.opset, cfg.networks, &mut rng)?;

        let mut pruned_scores = Vec::with_capacity(candidates.len());
        let mut oneshot_scores = Vec::with_capacity(candidates.len());
        let mut truth = Vec::with_capacity(candidates.len());
        let repeats = cfg.scratch_repeats.max(1);
        for g in &candidates {
            pruned_scores.push(pruned.evaluate_path(g, val, engine_cfg.batch_size, None)?);
            oneshot_scores.push(oneshot.evaluate_path(g, val, engine_cfg.batch_size, None)?);
            let mut acc = 0.0;
            for r in 0..repeats {
                let scratch = ScratchEvaluator {
                    train,
                    val,
                    shape: engine_cfg.model_shape(),
                    opset: engine_cfg.opset.clone(),
                    epochs: cfg.scratch_epochs,
                    opts: opts.clone(),
                    seed: seed.wrapping_add((r as u64) << 32),
                };
                acc += scratch.train_and_score(g)?;
            }
            truth.push(acc / repeats as f64);
        }

        outcomes.push(SeedOutcome {
            seed,
            tau_pruned: kendall_tau(&pruned_scores, &truth)?,
            tau_oneshot: kendall_tau(&oneshot_scores, &truth)?,
        });
    }

    let n = outcomes.len() as f64;
    let mean_tau_pruned = outcomes.iter().map(|o| o.tau_pruned).sum::<f64>() / n;
    let mean_tau_oneshot = outcomes.iter().map(|o| o.tau_oneshot).sum::<f64>() / n;
    let pruned_wins = outcomes.iter().filter(|o| o.tau_pruned >= o.tau_oneshot).count();
    Ok(RankStudyReport { outcomes, mean_tau_pruned, mean_tau_oneshot, pruned_wins })
}
