//! The search engine: grow candidate networks block by block under an
//! evolutionary loop, score them against a shared-weight supernet (or the
//! analytic surrogate), prune the supernet to the elite population between
//! stages, and keep the whole run deterministic and resumable.
//!
//! One call to [`Engine::step`] advances one unit of work (warm-up or one
//! generation); checkpoints taken between steps resume bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::digest::{fnv1a64, Fnv1a64};
use crate::evaluators::{
    EvalError, Evaluator, SharedWeightEvaluator, SurrogateEvaluator,
};
use crate::genome::{BlockGenome, GenomeError, NetworkGenome, SkeletonSpec, BLOCK_VEC_LEN};
use crate::selection::{environmental_select, Individual, Population, SelectionError};
use crate::space::{random_block, InputShape, ModelShape, OpSet, SpaceError};
use crate::supernet::{
    CosineSchedule, SampleMode, SuperNet, SuperNetError, TrainOptions,
};
use crate::variation::{
    generate_offspring, generate_offspring_flat, VariationError, VariationParams,
};

const ENGINE_MAGIC: &[u8; 4] = b"GEVS";
const ENGINE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    SuperNet(#[from] SuperNetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("shared-weight fitness requires train and validation datasets")]
    MissingData,
    #[error("dataset shape {got:?} does not match configured input {expected:?}")]
    InputMismatch { got: InputShape, expected: InputShape },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint digest mismatch (file corrupted)")]
    DigestMismatch,
    #[error("checkpoint version {0} unsupported")]
    VersionMismatch(u32),
    #[error("checkpoint was produced with a different dataset (digest mismatch)")]
    DatasetMismatch,
    #[error("search already complete")]
    AlreadyDone,
}

/// Fitness source for the search loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitnessKind {
    /// Accuracy read from the progressively pruned weight-sharing supernet.
    SharedWeight,
    /// Closed-form surrogate with a planted optimum derived from this seed.
    Surrogate { target_seed: u64 },
}

/// Whether candidates grow block by block or start complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthMode {
    /// One growth stage per block; only the newest block is searched.
    Staged,
    /// Flat evolutionary baseline: complete genomes from the start, variation
    /// on a random block, equal generation budget (B * G).
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Number of blocks in a complete network (B).
    pub total_blocks: usize,
    /// Generations per growth stage (G).
    pub generations_per_stage: usize,
    /// Population size kept after environmental selection (P_num).
    pub pop_size: usize,
    /// Supernet warm-up epochs before the search starts (E_w).
    pub warmup_epochs: usize,
    /// Supernet training epochs per generation (E_s).
    pub stage_epochs: usize,
    /// Random completions per partial-genome assessment (M).
    pub completion_samples: usize,
    pub batch_size: usize,
    /// Validation batches per accuracy readout (None = full set).
    pub eval_batches: Option<usize>,
    pub lr_max: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub variation: VariationParams,
    /// Keep the most accurate candidates through partial-front truncation.
    pub accuracy_protection: bool,
    pub input: InputShape,
    pub base_width: usize,
    pub classes: usize,
    pub opset: OpSet,
    pub fitness: FitnessKind,
    pub growth: GrowthMode,
    pub seed: u64,
}

impl EngineConfig {
    /// Small vector-mode configuration that runs a full search in seconds.
    pub fn desk_default() -> Self {
        Self {
            total_blocks: 3,
            generations_per_stage: 5,
            pop_size: 8,
            warmup_epochs: 10,
            stage_epochs: 2,
            completion_samples: 4,
            batch_size: 16,
            eval_batches: None,
            lr_max: 0.01,
            momentum: 0.9,
            weight_decay: 3e-4,
            variation: VariationParams::default(),
            accuracy_protection: true,
            input: InputShape::Vector { dim: 8 },
            base_width: 8,
            classes: 4,
            opset: OpSet::vec4(),
            fitness: FitnessKind::SharedWeight,
            growth: GrowthMode::Staged,
            seed: 0,
        }
    }

    /// Full-scale image-mode configuration: 8 blocks, 16 base channels,
    /// population 10, 30 generations per stage, 50 supernet epochs per stage
    /// interval.
    pub fn full_scale() -> Self {
        Self {
            total_blocks: 8,
            generations_per_stage: 30,
            pop_size: 10,
            warmup_epochs: 50,
            stage_epochs: 50,
            completion_samples: 4,
            batch_size: 256,
            eval_batches: None,
            lr_max: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            variation: VariationParams::default(),
            accuracy_protection: true,
            input: InputShape::Image { height: 32, width: 32, channels: 3 },
            base_width: 16,
            classes: 10,
            opset: OpSet::conv5(),
            fitness: FitnessKind::SharedWeight,
            growth: GrowthMode::Staged,
            seed: 0,
        }
    }

    pub fn skeleton(&self) -> SkeletonSpec {
        SkeletonSpec::new(self.total_blocks)
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape::new(self.input, self.base_width, self.classes, self.skeleton())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_u32(&mut out, self.total_blocks as u32);
        push_u32(&mut out, self.generations_per_stage as u32);
        push_u32(&mut out, self.pop_size as u32);
        push_u32(&mut out, self.warmup_epochs as u32);
        push_u32(&mut out, self.stage_epochs as u32);
        push_u32(&mut out, self.completion_samples as u32);
        push_u32(&mut out, self.batch_size as u32);
        match self.eval_batches {
            None => out.push(0),
            Some(n) => {
                out.push(1);
                push_u32(&mut out, n as u32);
            }
        }
        out.extend_from_slice(&self.lr_max.to_bits().to_le_bytes());
        out.extend_from_slice(&self.momentum.to_bits().to_le_bytes());
        out.extend_from_slice(&self.weight_decay.to_bits().to_le_bytes());
        out.extend_from_slice(&self.variation.crossover_rate.to_bits().to_le_bytes());
        out.extend_from_slice(&self.variation.mutation_rate.to_bits().to_le_bytes());
        push_u32(&mut out, self.variation.dedup_retries as u32);
        out.push(self.accuracy_protection as u8);
        match self.input {
            InputShape::Image { height, width, channels } => {
                out.push(0);
                push_u32(&mut out, height as u32);
                push_u32(&mut out, width as u32);
                push_u32(&mut out, channels as u32);
            }
            InputShape::Vector { dim } => {
                out.push(1);
                push_u32(&mut out, dim as u32);
            }
        }
        push_u32(&mut out, self.base_width as u32);
        push_u32(&mut out, self.classes as u32);
        let name = self.opset.name().as_bytes();
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name);
        match self.fitness {
            FitnessKind::SharedWeight => out.push(0),
            FitnessKind::Surrogate { target_seed } => {
                out.push(1);
                out.extend_from_slice(&target_seed.to_le_bytes());
            }
        }
        out.push(match self.growth {
            GrowthMode::Staged => 0,
            GrowthMode::Flat => 1,
        });
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, EngineError> {
        let total_blocks = r.u32()? as usize;
        let generations_per_stage = r.u32()? as usize;
        let pop_size = r.u32()? as usize;
        let warmup_epochs = r.u32()? as usize;
        let stage_epochs = r.u32()? as usize;
        let completion_samples = r.u32()? as usize;
        let batch_size = r.u32()? as usize;
        let eval_batches = match r.u8()? {
            0 => None,
            _ => Some(r.u32()? as usize),
        };
        let lr_max = f32::from_bits(r.u32()?);
        let momentum = f32::from_bits(r.u32()?);
        let weight_decay = f32::from_bits(r.u32()?);
        let crossover_rate = f64::from_bits(r.u64()?);
        let mutation_rate = f64::from_bits(r.u64()?);
        let dedup_retries = r.u32()? as usize;
        let accuracy_protection = r.u8()? != 0;
        let input = match r.u8()? {
            0 => InputShape::Image {
                height: r.u32()? as usize,
                width: r.u32()? as usize,
                channels: r.u32()? as usize,
            },
            _ => InputShape::Vector { dim: r.u32()? as usize },
        };
        let base_width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| EngineError::Format("bad opset name".into()))?;
        let opset = OpSet::by_name(&name)?;
        let fitness = match r.u8()? {
            0 => FitnessKind::SharedWeight,
            _ => FitnessKind::Surrogate { target_seed: r.u64()? },
        };
        let growth = match r.u8()? {
            0 => GrowthMode::Staged,
            _ => GrowthMode::Flat,
        };
        let seed = r.u64()?;
        Ok(Self {
            total_blocks,
            generations_per_stage,
            pop_size,
            warmup_epochs,
            stage_epochs,
            completion_samples,
            batch_size,
            eval_batches,
            lr_max,
            momentum,
            weight_decay,
            variation: VariationParams { crossover_rate, mutation_rate, dedup_retries },
            accuracy_protection,
            input,
            base_width,
            classes,
            opset,
            fitness,
            growth,
            seed,
        })
    }

    /// Stable digest of the full configuration.
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.encode())
    }
}

/// One row of the per-generation search log.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRecord {
    pub stage: usize,
    pub generation: usize,
    pub best_acc: f64,
    pub mean_acc: f64,
    pub min_size: f64,
    pub best_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Init,
    Search { stage_idx: usize, generation: usize },
    Done,
}

/// Final outcome of a completed search.
#[derive(Debug, Clone)]
pub struct FinalReport {
    pub best_genome: NetworkGenome,
    pub best_acc: f64,
    pub best_size: f64,
    pub config_digest: u64,
    pub log: Vec<GenRecord>,
    /// Digest over the final population ids and objectives; two runs agree
    /// iff this matches.
    pub population_digest: u64,
}

pub struct Engine {
    config: EngineConfig,
    rng: ChaCha8Rng,
    supernet: Option<SuperNet>,
    schedule: CosineSchedule,
    train: Option<Dataset>,
    val: Option<Dataset>,
    pop: Population,
    phase: Phase,
    log: Vec<GenRecord>,
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        train: Option<Dataset>,
        val: Option<Dataset>,
    ) -> Result<Self, EngineError> {
        let (supernet, schedule) = match config.fitness {
            FitnessKind::SharedWeight => {
                let train_data = train.as_ref().ok_or(EngineError::MissingData)?;
                val.as_ref().ok_or(EngineError::MissingData)?;
                let got = train_data.input_shape();
                if got != config.input {
                    return Err(EngineError::InputMismatch { got, expected: config.input });
                }
                let bpe = train_data.len().div_ceil(config.batch_size);
                let horizon =
                    bpe * (config.warmup_epochs + config.total_generations() * config.stage_epochs);
                let sn = SuperNet::init(config.model_shape(), config.opset.clone(), config.seed);
                (Some(sn), CosineSchedule::new(horizon))
            }
            FitnessKind::Surrogate { .. } => (None, CosineSchedule::new(1)),
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            rng,
            supernet,
            schedule,
            train,
            val,
            pop: Vec::new(),
            phase: Phase::Init,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn supernet(&self) -> Option<&SuperNet> {
        self.supernet.as_ref()
    }

    /// Consume the engine, returning the trained supernet (shared-weight
    /// mode); used by the ranking-fidelity study.
    pub fn into_supernet(self) -> Option<SuperNet> {
        self.supernet
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn log(&self) -> &[GenRecord] {
        &self.log
    }

    /// Total generation budget, identical for staged and flat modes.
    fn total_generations_cfg(config: &EngineConfig) -> usize {
        config.total_blocks * config.generations_per_stage
    }

    fn train_opts(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.config.batch_size,
            lr_max: self.config.lr_max,
            momentum: self.config.momentum,
            weight_decay: self.config.weight_decay,
        }
    }

    /// Number of growth stages this run iterates.
    fn stage_count(&self) -> usize {
        match self.config.growth {
            GrowthMode::Staged => self.config.total_blocks,
            GrowthMode::Flat => 1,
        }
    }

    fn generations_per_stage(&self) -> usize {
        match self.config.growth {
            GrowthMode::Staged => self.config.generations_per_stage,
            GrowthMode::Flat => Self::total_generations_cfg(&self.config),
        }
    }

    /// Genome length during stage `stage_idx` (0-based).
    fn stage_genome_len(&self, stage_idx: usize) -> usize {
        match self.config.growth {
            GrowthMode::Staged => stage_idx + 1,
            GrowthMode::Flat => self.config.total_blocks,
        }
    }

    fn sample_initial_population(&mut self) -> Result<(), EngineError> {
        let len = self.stage_genome_len(0);
        let skeleton = self.config.skeleton();
        let mut pop: Population = Vec::with_capacity(self.config.pop_size);
        let mut seen = std::collections::BTreeSet::new();
        let mut attempts = 0usize;
        while pop.len() < self.config.pop_size {
            let mut g = NetworkGenome::empty(skeleton.clone());
            for _ in 0..len {
                g.push_block(random_block(&self.config.opset, &mut self.rng))?;
            }
            attempts += 1;
            let h = g.canonical_hash();
            if seen.contains(&h) && attempts < self.config.pop_size * 50 {
                continue;
            }
            seen.insert(h);
            pop.push(Individual::new(g));
        }
        self.pop = pop;
        Ok(())
    }

    /// Append one random block to every survivor, deduplicating grown
    /// genomes against each other with the usual retry budget.
    fn grow_population(&mut self) -> Result<(), EngineError> {
        let mut grown: Population = Vec::with_capacity(self.pop.len());
        let mut seen = std::collections::BTreeSet::new();
        let pop = std::mem::take(&mut self.pop);
        for ind in &pop {
            let mut g = ind.genome.clone();
            g.push_block(random_block(&self.config.opset, &mut self.rng))?;
            for _ in 0..self.config.variation.dedup_retries {
                if !seen.contains(&g.canonical_hash()) {
                    break;
                }
                let mut retry = ind.genome.clone();
                retry.push_block(random_block(&self.config.opset, &mut self.rng))?;
                g = retry;
            }
            seen.insert(g.canonical_hash());
            grown.push(Individual::new(g));
        }
        self.pop = grown;
        Ok(())
    }

    fn assess_all(&mut self, pool: &mut Population) -> Result<(), EngineError> {
        match self.config.fitness {
            FitnessKind::SharedWeight => {
                let sn = self.supernet.as_ref().expect("shared mode has a supernet");
                let val = self.val.as_ref().expect("shared mode has validation data");
                let ev = SharedWeightEvaluator {
                    supernet: sn,
                    val,
                    batch_size: self.config.batch_size,
                    n_batches: self.config.eval_batches,
                };
                for ind in pool.iter_mut() {
                    ind.potential = Some(ev.assess(
                        &ind.genome,
                        self.config.completion_samples,
                        &mut self.rng,
                    )?);
                }
            }
            FitnessKind::Surrogate { target_seed } => {
                let ev = SurrogateEvaluator::new(
                    self.config.model_shape(),
                    self.config.opset.clone(),
                    target_seed,
                );
                for ind in pool.iter_mut() {
                    ind.potential = Some(ev.assess(
                        &ind.genome,
                        self.config.completion_samples,
                        &mut self.rng,
                    )?);
                }
            }
        }
        Ok(())
    }

    fn record_generation(&mut self, stage: usize, generation: usize) {
        let mut best_acc = f64::NEG_INFINITY;
        let mut best_id = 0;
        let mut sum = 0.0;
        let mut min_size = f64::INFINITY;
        for i in &self.pop {
            let p = i.potential.expect("population evaluated");
            if p.exp_acc > best_acc || (p.exp_acc == best_acc && i.id < best_id) {
                best_acc = p.exp_acc;
                best_id = i.id;
            }
            sum += p.exp_acc;
            min_size = min_size.min(p.exp_size);
        }
        self.log.push(GenRecord {
            stage,
            generation,
            best_acc,
            mean_acc: sum / self.pop.len() as f64,
            min_size,
            best_id,
        });
    }

    /// Advance one unit of work. Returns true while more work remains.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        match self.phase {
            Phase::Done => Err(EngineError::AlreadyDone),
            Phase::Init => {
                if let Some(sn) = self.supernet.as_mut() {
                    let train = self.train.as_ref().expect("shared mode has train data");
                    let opts = TrainOptions {
                        batch_size: self.config.batch_size,
                        lr_max: self.config.lr_max,
                        momentum: self.config.momentum,
                        weight_decay: self.config.weight_decay,
                    };
                    sn.train(
                        train,
                        self.config.warmup_epochs,
                        SampleMode::WarmUp,
                        &opts,
                        &mut self.schedule,
                        &mut self.rng,
                    )?;
                }
                self.sample_initial_population()?;
                self.phase = Phase::Search { stage_idx: 0, generation: 0 };
                Ok(true)
            }
            Phase::Search { stage_idx, generation } => {
                if generation == 0 && stage_idx > 0 {
                    // Entering a new growth stage: prune the supernet to the
                    // elite population, then grow everyone by one block.
                    if let Some(sn) = self.supernet.as_mut() {
                        sn.prune(&self.pop, self.config.pop_size)?;
                    }
                    self.grow_population()?;
                }
                self.run_generation(stage_idx, generation)?;
                let next_gen = generation + 1;
                self.phase = if next_gen == self.generations_per_stage() {
                    if stage_idx + 1 == self.stage_count() {
                        Phase::Done
                    } else {
                        Phase::Search { stage_idx: stage_idx + 1, generation: 0 }
                    }
                } else {
                    Phase::Search { stage_idx, generation: next_gen }
                };
                Ok(self.phase != Phase::Done)
            }
        }
    }

    fn run_generation(&mut self, stage_idx: usize, generation: usize) -> Result<(), EngineError> {
        let stage_len = self.stage_genome_len(stage_idx);
        let offspring = match self.config.growth {
            GrowthMode::Staged => generate_offspring(
                &self.pop,
                stage_len,
                &self.config.opset,
                self.config.variation,
                &mut self.rng,
            )?,
            GrowthMode::Flat => generate_offspring_flat(
                &self.pop,
                &self.config.opset,
                self.config.variation,
                &mut self.rng,
            )?,
        };
        let mut union = self.pop.clone();
        union.extend(offspring);

        if self.supernet.is_some() && self.config.stage_epochs > 0 {
            let train = self.train.clone().expect("shared mode has train data");
            let opts = self.train_opts();
            let mut schedule = self.schedule;
            let sn = self.supernet.as_mut().expect("shared mode has a supernet");
            sn.train(
                &train,
                self.config.stage_epochs,
                SampleMode::Interval(&union),
                &opts,
                &mut schedule,
                &mut self.rng,
            )?;
            self.schedule = schedule;
        }

        self.assess_all(&mut union)?;
        self.pop = environmental_select(
            union,
            self.config.pop_size,
            self.config.accuracy_protection,
        )?;
        self.record_generation(stage_idx + 1, generation + 1);
        Ok(())
    }

    /// Run to completion.
    pub fn run(&mut self) -> Result<FinalReport, EngineError> {
        while !self.is_done() {
            self.step()?;
        }
        self.final_report()
    }

    pub fn final_report(&self) -> Result<FinalReport, EngineError> {
        if !self.is_done() {
            return Err(EngineError::Format("search not finished".into()));
        }
        let best = self
            .pop
            .iter()
            .max_by(|a, b| {
                let (pa, pb) = (a.potential.unwrap(), b.potential.unwrap());
                pa.exp_acc
                    .total_cmp(&pb.exp_acc)
                    .then_with(|| pb.exp_size.total_cmp(&pa.exp_size))
                    .then_with(|| b.id.cmp(&a.id))
            })
            .expect("population nonempty");
        let p = best.potential.unwrap();
        let mut h = Fnv1a64::new();
        for i in &self.pop {
            h.write_u64(i.id);
            let est = i.potential.unwrap();
            h.write_u64(est.exp_acc.to_bits());
            h.write_u64(est.exp_size.to_bits());
        }
        Ok(FinalReport {
            best_genome: best.genome.clone(),
            best_acc: p.exp_acc,
            best_size: p.exp_size,
            config_digest: self.config.digest(),
            log: self.log.clone(),
            population_digest: h.finish(),
        })
    }

    /// CSV rendering of the generation log.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("stage,generation,best_acc,mean_acc,min_size,best_id\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.1},{:#018x}\n",
                r.stage, r.generation, r.best_acc, r.mean_acc, r.min_size, r.best_id
            ));
        }
        out
    }

    // --- checkpointing ----------------------------------------------------

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ENGINE_MAGIC);
        push_u32(&mut out, ENGINE_VERSION);
        let cfg = self.config.encode();
        push_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(&cfg);

        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out.extend_from_slice(&(self.schedule.step as u64).to_le_bytes());
        out.extend_from_slice(&(self.schedule.total_steps as u64).to_le_bytes());

        match self.phase {
            Phase::Init => out.push(0),
            Phase::Search { stage_idx, generation } => {
                out.push(1);
                push_u32(&mut out, stage_idx as u32);
                push_u32(&mut out, generation as u32);
            }
            Phase::Done => out.push(2),
        }

        push_u32(&mut out, self.pop.len() as u32);
        for ind in &self.pop {
            push_u32(&mut out, ind.genome.len() as u32);
            for b in ind.genome.blocks() {
                out.extend_from_slice(
                    &b.encode(self.config.opset.op_count()).expect("stored genomes valid"),
                );
            }
            match ind.potential {
                None => out.push(0),
                Some(p) => {
                    out.push(1);
                    out.extend_from_slice(&p.exp_acc.to_bits().to_le_bytes());
                    out.extend_from_slice(&p.exp_size.to_bits().to_le_bytes());
                    push_u32(&mut out, p.n_samples as u32);
                }
            }
            match ind.front {
                None => out.push(0),
                Some(f) => {
                    out.push(1);
                    push_u32(&mut out, f as u32);
                }
            }
        }

        push_u32(&mut out, self.log.len() as u32);
        for r in &self.log {
            push_u32(&mut out, r.stage as u32);
            push_u32(&mut out, r.generation as u32);
            out.extend_from_slice(&r.best_acc.to_bits().to_le_bytes());
            out.extend_from_slice(&r.mean_acc.to_bits().to_le_bytes());
            out.extend_from_slice(&r.min_size.to_bits().to_le_bytes());
            out.extend_from_slice(&r.best_id.to_le_bytes());
        }

        for ds in [&self.train, &self.val] {
            match ds {
                None => out.push(0),
                Some(d) => {
                    out.push(1);
                    out.extend_from_slice(&d.digest().to_le_bytes());
                }
            }
        }

        match &self.supernet {
            None => out.push(0),
            Some(sn) => {
                out.push(1);
                let bytes = sn.to_bytes();
                out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
                out.extend_from_slice(&bytes);
            }
        }

        let digest = fnv1a64(&out);
        out.extend_from_slice(&digest.to_le_bytes());
        out
    }

    /// Restore a checkpoint. Datasets are not stored in the checkpoint; the
    /// caller must pass the same data, verified by digest.
    pub fn resume(
        bytes: &[u8],
        train: Option<Dataset>,
        val: Option<Dataset>,
    ) -> Result<Self, EngineError> {
        if bytes.len() < 8 {
            return Err(EngineError::Format("checkpoint too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a64(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(EngineError::DigestMismatch);
        }
        let mut r = Reader { data: body, pos: 0 };
        if r.take(4)? != ENGINE_MAGIC {
            return Err(EngineError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != ENGINE_VERSION {
            return Err(EngineError::VersionMismatch(version));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_bytes = r.take(cfg_len)?;
        let config = EngineConfig::decode(&mut Reader { data: cfg_bytes, pos: 0 })?;

        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        let schedule = CosineSchedule {
            step: r.u64()? as usize,
            total_steps: r.u64()? as usize,
        };

        let phase = match r.u8()? {
            0 => Phase::Init,
            1 => Phase::Search { stage_idx: r.u32()? as usize, generation: r.u32()? as usize },
            2 => Phase::Done,
            t => return Err(EngineError::Format(format!("bad phase tag {t}"))),
        };

        let skeleton = config.skeleton();
        let n_pop = r.u32()? as usize;
        let mut pop = Vec::with_capacity(n_pop);
        for _ in 0..n_pop {
            let n_blocks = r.u32()? as usize;
            let mut g = NetworkGenome::empty(skeleton.clone());
            for _ in 0..n_blocks {
                let raw = r.take(BLOCK_VEC_LEN)?;
                g.push_block(BlockGenome::decode(raw, config.opset.op_count())?)?;
            }
            let mut ind = Individual::new(g);
            if r.u8()? == 1 {
                ind.potential = Some(crate::selection::PotentialEstimate {
                    exp_acc: f64::from_bits(r.u64()?),
                    exp_size: f64::from_bits(r.u64()?),
                    n_samples: r.u32()? as usize,
                });
            }
            if r.u8()? == 1 {
                ind.front = Some(r.u32()? as usize);
            }
            pop.push(ind);
        }

        let n_log = r.u32()? as usize;
        let mut log = Vec::with_capacity(n_log);
        for _ in 0..n_log {
            log.push(GenRecord {
                stage: r.u32()? as usize,
                generation: r.u32()? as usize,
                best_acc: f64::from_bits(r.u64()?),
                mean_acc: f64::from_bits(r.u64()?),
                min_size: f64::from_bits(r.u64()?),
                best_id: r.u64()?,
            });
        }

        for ds in [&train, &val] {
            let stored = match r.u8()? {
                0 => None,
                _ => Some(r.u64()?),
            };
            match (stored, ds) {
                (None, None) => {}
                (Some(d), Some(actual)) if actual.digest() == d => {}
                _ => return Err(EngineError::DatasetMismatch),
            }
        }

        let supernet = match r.u8()? {
            0 => None,
            _ => {
                let len = r.u64()? as usize;
                Some(SuperNet::from_bytes(r.take(len)?)?)
            }
        };

        Ok(Self { config, rng, supernet, schedule, train, val, pop, phase, log })
    }
}

impl EngineConfig {
    /// Total generation budget of a run (B * G in both growth modes).
    pub fn total_generations(&self) -> usize {
        self.total_blocks * self.generations_per_stage
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        if self.pos + n > self.data.len() {
            return Err(EngineError::Format("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EngineError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn surrogate_config(seed: u64) -> EngineConfig {
        EngineConfig {
            fitness: FitnessKind::Surrogate { target_seed: 1234 },
            warmup_epochs: 0,
            stage_epochs: 0,
            total_blocks: 2,
            generations_per_stage: 6,
            pop_size: 8,
            completion_samples: 4,
            seed,
            ..EngineConfig::desk_default()
        }
    }

    #[test]
    fn surrogate_search_runs_and_improves() {
        let mut e = Engine::new(surrogate_config(5), None, None).unwrap();
        let report = e.run().unwrap();
        assert_eq!(report.best_genome.len(), 2);
        let first = report.log.first().unwrap().best_acc;
        let last = report.log.last().unwrap().best_acc;
        assert!(last >= first, "search must not lose its best: {first} -> {last}");
        assert!(last > 0.6, "surrogate search should make progress, got {last}");
    }

    #[test]
    fn surrogate_search_deterministic() {
        let a = Engine::new(surrogate_config(9), None, None).unwrap().run().unwrap();
        let b = Engine::new(surrogate_config(9), None, None).unwrap().run().unwrap();
        assert_eq!(a.population_digest, b.population_digest);
        assert_eq!(a.best_genome, b.best_genome);
        assert_eq!(a.log, b.log);
        let c = Engine::new(surrogate_config(10), None, None).unwrap().run().unwrap();
        assert_ne!(a.population_digest, c.population_digest, "different seeds should differ");
    }

    #[test]
    fn flat_mode_same_budget_complete_genomes() {
        let mut cfg = surrogate_config(3);
        cfg.growth = GrowthMode::Flat;
        let mut e = Engine::new(cfg.clone(), None, None).unwrap();
        let report = e.run().unwrap();
        assert_eq!(report.log.len(), cfg.total_generations());
        for i in e.population() {
            assert!(i.genome.is_complete());
        }
    }

    #[test]
    fn checkpoint_resume_is_bit_identical_surrogate() {
        let cfg = surrogate_config(17);
        let mut full = Engine::new(cfg.clone(), None, None).unwrap();
        let full_report = full.run().unwrap();

        let mut half = Engine::new(cfg, None, None).unwrap();
        for _ in 0..5 {
            half.step().unwrap();
        }
        let bytes = half.checkpoint_bytes();
        let mut resumed = Engine::resume(&bytes, None, None).unwrap();
        let resumed_report = resumed.run().unwrap();
        assert_eq!(full_report.population_digest, resumed_report.population_digest);
        assert_eq!(full_report.best_genome, resumed_report.best_genome);
        assert_eq!(full_report.log, resumed_report.log);
    }

    #[test]
    fn checkpoint_corruption_and_dataset_mismatch_rejected() {
        let cfg = surrogate_config(21);
        let mut e = Engine::new(cfg, None, None).unwrap();
        e.step().unwrap();
        let mut bytes = e.checkpoint_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x55;
        assert!(matches!(
            Engine::resume(&bytes, None, None),
            Err(EngineError::DigestMismatch) | Err(EngineError::Format(_))
        ));
    }

    #[test]
    fn shared_weight_search_end_to_end_and_resume() {
        let train = gen_synthetic(4, 64, InputShape::Vector { dim: 8 }, 0.1, 100).unwrap();
        let val = gen_synthetic(4, 32, InputShape::Vector { dim: 8 }, 0.1, 101).unwrap();
        let cfg = EngineConfig {
            total_blocks: 2,
            generations_per_stage: 2,
            pop_size: 4,
            warmup_epochs: 2,
            stage_epochs: 1,
            completion_samples: 2,
            seed: 7,
            ..EngineConfig::desk_default()
        };
        let mut full = Engine::new(cfg.clone(), Some(train.clone()), Some(val.clone())).unwrap();
        let full_report = full.run().unwrap();
        assert!(full_report.best_acc >= 0.0 && full_report.best_acc <= 1.0);
        assert_eq!(full_report.log.len(), 4);
        // Supernet got pruned when stage 2 began.
        let sn = full.supernet().unwrap();
        assert!(matches!(
            sn.prune_state()[0],
            crate::supernet::PruneState::Restricted(_)
        ));

        let mut half = Engine::new(cfg, Some(train.clone()), Some(val.clone())).unwrap();
        half.step().unwrap(); // warmup + init pop
        half.step().unwrap(); // one generation
        let bytes = half.checkpoint_bytes();
        let mut resumed = Engine::resume(&bytes, Some(train.clone()), Some(val.clone())).unwrap();
        let resumed_report = resumed.run().unwrap();
        assert_eq!(full_report.population_digest, resumed_report.population_digest);
        assert_eq!(full_report.log, resumed_report.log);
        assert_eq!(
            full.supernet().unwrap().store_digest(),
            resumed.supernet().unwrap().store_digest(),
            "weights after resume must be bit-identical"
        );

        // Wrong dataset refused.
        let other = gen_synthetic(4, 64, InputShape::Vector { dim: 8 }, 0.1, 999).unwrap();
        assert!(matches!(
            Engine::resume(&bytes, Some(other), Some(val)),
            Err(EngineError::DatasetMismatch)
        ));
    }

    #[test]
    fn missing_data_rejected_for_shared_mode() {
        let cfg = EngineConfig::desk_default();
        assert!(matches!(Engine::new(cfg, None, None), Err(EngineError::MissingData)));
    }

    #[test]
    fn config_digest_changes_with_any_field() {
        let a = EngineConfig::desk_default();
        let mut b = a.clone();
        b.pop_size += 1;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn csv_log_shape() {
        let mut e = Engine::new(surrogate_config(2), None, None).unwrap();
        e.run().unwrap();
        let csv = e.log_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "stage,generation,best_acc,mean_acc,min_size,best_id");
        assert_eq!(lines.len() - 1, e.log().len());
        for l in &lines[1..] {
            assert_eq!(l.split(',').count(), 6);
        }
    }
}
