//! Weight-sharing supernet over the block space.
//!
//! One parameter store covers every candidate edge operation of every block
//! position; a concrete genome selects a path through it. Training samples a
//! single path per mini-batch and updates only that path's parameters.
//! Between growth stages, blocks already searched are restricted to the
//! structures present in the elite population and unreachable parameters are
//! dropped, without touching any surviving weight.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::data::Dataset;
use crate::genome::{
    BlockGenome, GenomeError, NetworkGenome, SkeletonSpec, FIRST_HIDDEN, LAST_HIDDEN,
};
use crate::numkernel::{
    cosine_lr, init_tensor, key_seed, op_backward, op_forward, sgd_step, softmax_cross_entropy,
    KernelError, OpCache, ParamKey, ParamRole, ParamStore, SgdConfig, Slot, Tensor,
};
use crate::numkernel as nk;
use crate::selection::Population;
use crate::space::{random_block, InputShape, ModelShape, OpKind, OpSet, SpaceStats};

const CHECKPOINT_MAGIC: &[u8; 4] = b"GEVO";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SuperNetError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("genome uses a structure pruned away at block {block}")]
    PrunedPath { block: usize },
    #[error("restricted block {block} has an empty allowed set")]
    EmptyRestriction { block: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("genome has {got} blocks, supernet expects {expected}")]
    IncompletePath { got: usize, expected: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint digest mismatch (file corrupted)")]
    DigestMismatch,
    #[error("checkpoint version {0} unsupported")]
    VersionMismatch(u32),
}

/// Prune status of one block position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneState {
    Free,
    /// Allowed block genomes at this position, sorted and deduplicated.
    Restricted(Vec<BlockGenome>),
}

#[derive(Debug, Clone)]
pub struct SuperNet {
    store: ParamStore,
    prune_state: Vec<PruneState>,
    shape: ModelShape,
    opset: OpSet,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_mean_loss: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PruneReport {
    /// Restricted-set size per pruned block.
    pub restricted_sizes: Vec<usize>,
    /// Exact remaining fraction of the weight-sharing space after the
    /// restriction, when the pruned prefix is a strict, nonempty prefix.
    pub reduction_ratio: Option<crate::space::ReductionRatio>,
    pub params_dropped: usize,
}

/// Cosine learning-rate schedule over a fixed training horizon, tracked in
/// optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CosineSchedule {
    pub step: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(total_steps: usize) -> Self {
        Self { step: 0, total_steps }
    }

    fn next_lr(&mut self, lr_max: f32) -> f32 {
        let lr = cosine_lr(self.step, self.total_steps, lr_max);
        self.step += 1;
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr_max: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

#[derive(Debug, Clone, Copy)]
pub enum SampleMode<'a> {
    /// Uniform random full paths respecting the prune state.
    WarmUp,
    /// Paths whose prefix is a uniformly chosen population member.
    Interval(&'a Population),
}

// --- forward/backward bookkeeping -----------------------------------------

struct LinearCache {
    x: Tensor,
    stride: usize,
    w_key: ParamKey,
    b_key: ParamKey,
}

struct BlockTrace {
    pre: [LinearCache; 2],
    /// (dest, src, op, cache) in forward evaluation order.
    edges: Vec<(usize, usize, u8, OpCache)>,
    concat: Tensor,
    proj_w_key: ParamKey,
    proj_b_key: ParamKey,
}

struct Trace {
    stem: LinearCache,
    blocks: Vec<BlockTrace>,
    gap_in_shape: Option<Vec<usize>>,
    classifier_x: Tensor,
}

impl SuperNet {
    /// Allocate and key-seed every parameter of the unpruned space.
    pub fn init(shape: ModelShape, opset: OpSet, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let vector = shape.is_vector_mode();
        let w0 = shape.base_width;

        let add_linear = |store: &mut ParamStore,
                              w_key: ParamKey,
                              b_key: ParamKey,
                              in_w: usize,
                              out_w: usize,
                              kernel: usize| {
            let (wshape, fan_in, fan_out): (Vec<usize>, usize, usize) = if vector {
                (vec![in_w, out_w], in_w, out_w)
            } else {
                (
                    vec![kernel, kernel, in_w, out_w],
                    kernel * kernel * in_w,
                    kernel * kernel * out_w,
                )
            };
            store.insert(w_key, init_tensor(&wshape, fan_in, fan_out, key_seed(seed, w_key)));
            store.insert(b_key, Tensor::zeros(&[out_w]));
        };

        let in_feat = match shape.input {
            InputShape::Image { channels, .. } => channels,
            InputShape::Vector { dim } => dim,
        };
        add_linear(
            &mut store,
            ParamKey::Stem { role: ParamRole::Weight },
            ParamKey::Stem { role: ParamRole::Bias },
            in_feat,
            w0,
            3,
        );

        let total = shape.skeleton.total_blocks();
        for block in 0..total {
            let bw = shape.block_width(block);
            let (in0, in1) = shape.block_input_widths(block);
            for (input, in_w) in [(0u8, in0), (1u8, in1)] {
                add_linear(
                    &mut store,
                    ParamKey::Preproc { block: block as u16, input, role: ParamRole::Weight },
                    ParamKey::Preproc { block: block as u16, input, role: ParamRole::Bias },
                    in_w,
                    bw,
                    1,
                );
            }
            add_linear(
                &mut store,
                ParamKey::Projection { block: block as u16, role: ParamRole::Weight },
                ParamKey::Projection { block: block as u16, role: ParamRole::Bias },
                4 * bw,
                bw,
                1,
            );
            for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                for src in 0..dest {
                    for d in opset.descriptors() {
                        let (wshape, fi, fo): (Vec<usize>, usize, usize) = match d.kind {
                            OpKind::Conv { kernel } => (
                                vec![kernel, kernel, bw, bw],
                                kernel * kernel * bw,
                                kernel * kernel * bw,
                            ),
                            OpKind::Dense { .. } => (vec![bw, bw], bw, bw),
                            _ => continue,
                        };
                        let w_key = ParamKey::Edge {
                            block: block as u16,
                            dest: dest as u8,
                            src: src as u8,
                            op: d.code,
                            role: ParamRole::Weight,
                        };
                        let b_key = ParamKey::Edge {
                            block: block as u16,
                            dest: dest as u8,
                            src: src as u8,
                            op: d.code,
                            role: ParamRole::Bias,
                        };
                        store.insert(w_key, init_tensor(&wshape, fi, fo, key_seed(seed, w_key)));
                        store.insert(b_key, Tensor::zeros(&[bw]));
                    }
                }
            }
        }

        let last_w = shape.block_width(total - 1);
        let ck_w = ParamKey::Classifier { role: ParamRole::Weight };
        store.insert(
            ck_w,
            init_tensor(&[last_w, shape.classes], last_w, shape.classes, key_seed(seed, ck_w)),
        );
        store.insert(ParamKey::Classifier { role: ParamRole::Bias }, Tensor::zeros(&[shape.classes]));

        let prune_state = vec![PruneState::Free; total];
        Self { store, prune_state, shape, opset, seed }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn opset(&self) -> &OpSet {
        &self.opset
    }

    pub fn skeleton(&self) -> &SkeletonSpec {
        &self.shape.skeleton
    }

    pub fn prune_state(&self) -> &[PruneState] {
        &self.prune_state
    }

    pub fn store_digest(&self) -> u64 {
        self.store.value_digest()
    }

    pub fn param_tensor_count(&self) -> usize {
        self.store.len()
    }

    // --- path sampling ----------------------------------------------------

    fn sample_block<R: Rng + ?Sized>(
        &self,
        position: usize,
        rng: &mut R,
    ) -> Result<BlockGenome, SuperNetError> {
        match &self.prune_state[position] {
            PruneState::Free => Ok(random_block(&self.opset, rng)),
            PruneState::Restricted(allowed) => {
                if allowed.is_empty() {
                    return Err(SuperNetError::EmptyRestriction { block: position });
                }
                Ok(allowed[rng.random_range(0..allowed.len())])
            }
        }
    }

    /// Sample a full path. Warm-up mode draws every block uniformly under
    /// the prune state; interval mode starts from a uniformly chosen
    /// population member's prefix.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        mode: SampleMode<'_>,
        rng: &mut R,
    ) -> Result<NetworkGenome, SuperNetError> {
        let total = self.skeleton().total_blocks();
        let mut genome = NetworkGenome::empty(self.skeleton().clone());
        match mode {
            SampleMode::WarmUp => {}
            SampleMode::Interval(pop) => {
                let pick = &pop[rng.random_range(0..pop.len())];
                for b in pick.genome.blocks() {
                    genome.push_block(*b)?;
                }
            }
        }
        while genome.len() < total {
            let block = self.sample_block(genome.len(), rng)?;
            genome.push_block(block)?;
        }
        Ok(genome)
    }

    /// Check a complete genome against the prune state.
    pub fn path_allowed(&self, genome: &NetworkGenome) -> Result<(), SuperNetError> {
        for (i, b) in genome.blocks().iter().enumerate() {
            if let PruneState::Restricted(allowed) = &self.prune_state[i] {
                if !allowed.contains(b) {
                    return Err(SuperNetError::PrunedPath { block: i });
                }
            }
        }
        Ok(())
    }

    /// Every parameter key the genome's path reads.
    pub fn path_param_keys(&self, genome: &NetworkGenome) -> BTreeSet<ParamKey> {
        let mut keys = BTreeSet::new();
        for role in [ParamRole::Weight, ParamRole::Bias] {
            keys.insert(ParamKey::Stem { role });
            keys.insert(ParamKey::Classifier { role });
        }
        for (i, b) in genome.blocks().iter().enumerate() {
            for role in [ParamRole::Weight, ParamRole::Bias] {
                keys.insert(ParamKey::Preproc { block: i as u16, input: 0, role });
                keys.insert(ParamKey::Preproc { block: i as u16, input: 1, role });
                keys.insert(ParamKey::Projection { block: i as u16, role });
                for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                    for (src, op) in b.incoming(dest) {
                        if self.opset.is_parametric(op) {
                            keys.insert(ParamKey::Edge {
                                block: i as u16,
                                dest: dest as u8,
                                src: src as u8,
                                op,
                                role,
                            });
                        }
                    }
                }
            }
        }
        keys
    }

    // --- forward / backward ----------------------------------------------

    fn linear_forward(
        &self,
        x: &Tensor,
        w_key: ParamKey,
        b_key: ParamKey,
        stride: usize,
    ) -> Result<(Tensor, LinearCache), SuperNetError> {
        let w = self.store.get(w_key)?;
        let b = self.store.get(b_key)?;
        let y = if self.shape.is_vector_mode() {
            nk::dense_forward(x, w, b)?
        } else {
            nk::conv2d_forward(x, w, b, stride)?
        };
        Ok((y, LinearCache { x: x.clone(), stride, w_key, b_key }))
    }

    fn linear_backward(
        &self,
        cache: &LinearCache,
        grad_y: &Tensor,
        grads: &mut BTreeMap<ParamKey, Tensor>,
    ) -> Result<Tensor, SuperNetError> {
        let w = self.store.get(cache.w_key)?;
        let (gx, gw, gb) = if self.shape.is_vector_mode() {
            nk::dense_backward(&cache.x, w, grad_y)?
        } else {
            nk::conv2d_backward(&cache.x, w, grad_y, cache.stride)?
        };
        accumulate(grads, cache.w_key, gw);
        accumulate(grads, cache.b_key, gb);
        Ok(gx)
    }

    /// Forward a complete genome; returns logits and the trace needed for
    /// backward.
    fn forward(&self, genome: &NetworkGenome, x: &Tensor) -> Result<(Tensor, Trace), SuperNetError> {
        let total = self.skeleton().total_blocks();
        if genome.len() != total {
            return Err(SuperNetError::IncompletePath { got: genome.len(), expected: total });
        }
        self.path_allowed(genome)?;
        let vector = self.shape.is_vector_mode();

        let (stem_out, stem_cache) = self.linear_forward(
            x,
            ParamKey::Stem { role: ParamRole::Weight },
            ParamKey::Stem { role: ParamRole::Bias },
            1,
        )?;

        // outputs[i] = output of block i; index -1 conceptually = stem.
        let mut outputs: Vec<Tensor> = Vec::with_capacity(total);
        let mut block_traces: Vec<BlockTrace> = Vec::with_capacity(total);

        for (i, block) in genome.blocks().iter().enumerate() {
            let input_a = if i >= 1 { &outputs[i - 1] } else { &stem_out };
            let input_b = if i >= 2 { &outputs[i - 2] } else { &stem_out };
            let (res_h, _) = self.shape.block_resolution(i);
            let stride_of = |t: &Tensor| -> usize {
                if vector {
                    1
                } else {
                    t.shape()[1] / res_h.max(1)
                }
            };
            let (node0, pre0) = self.linear_forward(
                input_a,
                ParamKey::Preproc { block: i as u16, input: 0, role: ParamRole::Weight },
                ParamKey::Preproc { block: i as u16, input: 0, role: ParamRole::Bias },
                stride_of(input_a),
            )?;
            let (node1, pre1) = self.linear_forward(
                input_b,
                ParamKey::Preproc { block: i as u16, input: 1, role: ParamRole::Weight },
                ParamKey::Preproc { block: i as u16, input: 1, role: ParamRole::Bias },
                stride_of(input_b),
            )?;

            let mut node_values: Vec<Option<Tensor>> = vec![None; LAST_HIDDEN + 1];
            node_values[0] = Some(node0);
            node_values[1] = Some(node1);
            let mut edges = Vec::new();
            for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                let mut acc: Option<Tensor> = None;
                for (src, op) in block.incoming(dest) {
                    let kind = self
                        .opset
                        .descriptor(op)
                        .unwrap_or_else(|| panic!("op {op} missing from set"))
                        .kind;
                    let params = if self.opset.is_parametric(op) {
                        let wk = ParamKey::Edge {
                            block: i as u16,
                            dest: dest as u8,
                            src: src as u8,
                            op,
                            role: ParamRole::Weight,
                        };
                        let bk = ParamKey::Edge {
                            block: i as u16,
                            dest: dest as u8,
                            src: src as u8,
                            op,
                            role: ParamRole::Bias,
                        };
                        Some((self.store.get(wk)?, self.store.get(bk)?))
                    } else {
                        None
                    };
                    let (y, cache) =
                        op_forward(kind, node_values[src].as_ref().expect("topological order"), params)?;
                    match acc.as_mut() {
                        Some(a) => nk::add_into(a, &y),
                        None => acc = Some(y),
                    }
                    edges.push((dest, src, op, cache));
                }
                node_values[dest] = acc;
            }

            let hidden: Vec<&Tensor> = (FIRST_HIDDEN..=LAST_HIDDEN)
                .map(|d| node_values[d].as_ref().expect("hidden node computed"))
                .collect();
            let concat = nk::concat_last_axis(&hidden)?;
            let (out, _proj) = self.linear_forward(
                &concat,
                ParamKey::Projection { block: i as u16, role: ParamRole::Weight },
                ParamKey::Projection { block: i as u16, role: ParamRole::Bias },
                1,
            )?;
            outputs.push(out);
            block_traces.push(BlockTrace {
                pre: [pre0, pre1],
                edges,
                concat,
                proj_w_key: ParamKey::Projection { block: i as u16, role: ParamRole::Weight },
                proj_b_key: ParamKey::Projection { block: i as u16, role: ParamRole::Bias },
            });
        }

        let last = outputs.last().expect("at least one block");
        let (features, gap_in_shape) = if vector {
            (last.clone(), None)
        } else {
            (nk::global_avg_pool_forward(last)?, Some(last.shape().to_vec()))
        };
        let cw = self.store.get(ParamKey::Classifier { role: ParamRole::Weight })?;
        let cb = self.store.get(ParamKey::Classifier { role: ParamRole::Bias })?;
        let logits = nk::dense_forward(&features, cw, cb)?;
        Ok((
            logits,
            Trace { stem: stem_cache, blocks: block_traces, gap_in_shape, classifier_x: features },
        ))
    }

    fn backward(
        &self,
        trace: &Trace,
        grad_logits: &Tensor,
    ) -> Result<BTreeMap<ParamKey, Tensor>, SuperNetError> {
        let mut grads: BTreeMap<ParamKey, Tensor> = BTreeMap::new();
        let cw = self.store.get(ParamKey::Classifier { role: ParamRole::Weight })?;
        let (g_feat, gw, gb) = nk::dense_backward(&trace.classifier_x, cw, grad_logits)?;
        accumulate(&mut grads, ParamKey::Classifier { role: ParamRole::Weight }, gw);
        accumulate(&mut grads, ParamKey::Classifier { role: ParamRole::Bias }, gb);

        let total = trace.blocks.len();
        // Gradients flowing into each block's output, plus the stem.
        let mut out_grads: Vec<Option<Tensor>> = vec![None; total];
        let mut stem_grad: Option<Tensor> = None;
        let last_grad = match &trace.gap_in_shape {
            Some(shape) => nk::global_avg_pool_backward(shape, &g_feat),
            None => g_feat,
        };
        out_grads[total - 1] = Some(last_grad);

        for i in (0..total).rev() {
            let bt = &trace.blocks[i];
            let g_out = match out_grads[i].take() {
                Some(g) => g,
                None => continue, // output never consumed (cannot happen for realized paths)
            };
            let (g_concat_w, g_concat_b) = {
                let w = self.store.get(bt.proj_w_key)?;
                let (gx, gw, gb) = if self.shape.is_vector_mode() {
                    nk::dense_backward(&bt.concat, w, &g_out)?
                } else {
                    nk::conv2d_backward(&bt.concat, w, &g_out, 1)?
                };
                accumulate(&mut grads, bt.proj_w_key, gw);
                accumulate(&mut grads, bt.proj_b_key, gb);
                (gx, ())
            };
            let _ = g_concat_b;
            let bw = self.shape.block_width(i);
            let parts = nk::split_last_axis(&g_concat_w, &[bw; 4]);
            let mut node_grads: Vec<Option<Tensor>> = vec![None; LAST_HIDDEN + 1];
            for (pi, dest) in (FIRST_HIDDEN..=LAST_HIDDEN).enumerate() {
                node_grads[dest] = Some(parts[pi].clone());
            }
            // Edges were recorded in forward order; walk them backwards so a
            // destination's gradient is complete before its sources see it.
            for (dest, src, _op, cache) in bt.edges.iter().rev() {
                let g_dest = node_grads[*dest].clone().expect("dest grad present");
                let (g_in, g_params) = op_backward(cache, &g_dest)?;
                if let Some((gw, gb)) = g_params {
                    let wk = ParamKey::Edge {
                        block: i as u16,
                        dest: *dest as u8,
                        src: *src as u8,
                        op: *_op,
                        role: ParamRole::Weight,
                    };
                    let bk = ParamKey::Edge {
                        block: i as u16,
                        dest: *dest as u8,
                        src: *src as u8,
                        op: *_op,
                        role: ParamRole::Bias,
                    };
                    accumulate(&mut grads, wk, gw);
                    accumulate(&mut grads, bk, gb);
                }
                match node_grads[*src].as_mut() {
                    Some(a) => nk::add_into(a, &g_in),
                    None => node_grads[*src] = Some(g_in),
                }
            }
            for (input, pre) in bt.pre.iter().enumerate() {
                if let Some(g_node) = node_grads[input].take() {
                    let g_in = self.linear_backward(pre, &g_node, &mut grads)?;
                    let target: isize = i as isize - 1 - input as isize;
                    if target >= 0 {
                        match out_grads[target as usize].as_mut() {
                            Some(a) => nk::add_into(a, &g_in),
                            None => out_grads[target as usize] = Some(g_in),
                        }
                    } else {
                        match stem_grad.as_mut() {
                            Some(a) => nk::add_into(a, &g_in),
                            None => stem_grad = Some(g_in),
                        }
                    }
                }
            }
        }

        if let Some(g) = stem_grad {
            self.linear_backward(&trace.stem, &g, &mut grads)?;
        }
        Ok(grads)
    }

    /// One loss evaluation with gradients for every parameter on the path.
    pub fn forward_backward(
        &self,
        genome: &NetworkGenome,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(f32, BTreeMap<ParamKey, Tensor>), SuperNetError> {
        let (logits, trace) = self.forward(genome, x)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&trace, &grad_logits)?;
        Ok((loss, grads))
    }

    /// Single-path supernet training: per mini-batch, sample one path,
    /// forward/backward only that path, SGD step with cosine learning rate
    /// over the schedule's horizon.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        epochs: usize,
        mode: SampleMode<'_>,
        opts: &TrainOptions,
        schedule: &mut CosineSchedule,
        rng: &mut R,
    ) -> Result<TrainReport, SuperNetError> {
        if data.is_empty() {
            return Err(SuperNetError::EmptyData);
        }
        let mut epoch_mean_loss = Vec::with_capacity(epochs);
        let mut steps = 0;
        for _ in 0..epochs {
            let shuffle_seed: u64 = rng.random();
            let mut loss_sum = 0.0f64;
            let mut n_batches = 0usize;
            for batch_idx in data.batch_indices(opts.batch_size, Some(shuffle_seed)) {
                let (x, labels) = data.batch(&batch_idx);
                let path = self.sample_path(mode, rng)?;
                let (loss, grads) = self.forward_backward(&path, &x, &labels)?;
                let lr = schedule.next_lr(opts.lr_max);
                sgd_step(
                    &mut self.store,
                    &grads,
                    SgdConfig { lr, momentum: opts.momentum, weight_decay: opts.weight_decay },
                )?;
                loss_sum += loss as f64;
                n_batches += 1;
                steps += 1;
            }
            epoch_mean_loss.push(loss_sum / n_batches as f64);
        }
        Ok(TrainReport { epoch_mean_loss, steps })
    }

    /// Forward-only accuracy with shared weights over the first `n_batches`
    /// validation batches (all of them when `None`); deterministic in-order
    /// batching, no weight updates.
    pub fn evaluate_path(
        &self,
        genome: &NetworkGenome,
        val: &Dataset,
        batch_size: usize,
        n_batches: Option<usize>,
    ) -> Result<f64, SuperNetError> {
        if val.is_empty() {
            return Err(SuperNetError::EmptyData);
        }
        let batches = val.batch_indices(batch_size, None);
        let take = n_batches.unwrap_or(batches.len()).min(batches.len()).max(1);
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch_idx in batches.into_iter().take(take) {
            let (x, labels) = val.batch(&batch_idx);
            let (logits, _) = self.forward(genome, &x)?;
            let classes = logits.shape()[1];
            for (row, &label) in labels.iter().enumerate() {
                let scores = &logits.data()[row * classes..(row + 1) * classes];
                let pred = (0..classes)
                    .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                    .unwrap();
                if pred == label {
                    correct += 1;
                }
            }
            seen += labels.len();
        }
        Ok(correct as f64 / seen as f64)
    }

    /// Restrict blocks 0..pop-genome-length to the union of the population's
    /// block genomes at each position and drop edge parameters no allowed
    /// path can reach. Surviving parameters are not touched.
    pub fn prune(&mut self, pop: &Population, p_num: usize) -> Result<PruneReport, SuperNetError> {
        let prefix = pop.first().map(|i| i.genome.len()).unwrap_or(0);
        for position in 0..prefix {
            let mut allowed: Vec<BlockGenome> =
                pop.iter().map(|i| *i.genome.block(position)).collect();
            allowed.sort_unstable();
            allowed.dedup();
            self.prune_state[position] = PruneState::Restricted(allowed);
        }

        // An edge parameter survives iff some allowed block at its position
        // uses (dest, src, op).
        let mut used: BTreeSet<(u16, u8, u8, u8)> = BTreeSet::new();
        for (position, state) in self.prune_state.iter().enumerate() {
            match state {
                PruneState::Free => {
                    for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                        for src in 0..dest {
                            for d in self.opset.descriptors() {
                                used.insert((position as u16, dest as u8, src as u8, d.code));
                            }
                        }
                    }
                }
                PruneState::Restricted(allowed) => {
                    for b in allowed {
                        for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                            for (src, op) in b.incoming(dest) {
                                used.insert((position as u16, dest as u8, src as u8, op));
                            }
                        }
                    }
                }
            }
        }
        let before = self.store.len();
        self.store.retain(|key| match key {
            ParamKey::Edge { block, dest, src, op, .. } => used.contains(&(block, dest, src, op)),
            _ => true,
        });
        let params_dropped = before - self.store.len();

        let restricted_sizes: Vec<usize> = self.prune_state[..prefix]
            .iter()
            .map(|s| match s {
                PruneState::Restricted(a) => a.len(),
                PruneState::Free => unreachable!("prefix was just restricted"),
            })
            .collect();
        let stats = SpaceStats::new(&self.opset, self.skeleton())
            .map_err(|e| SuperNetError::Format(e.to_string()))?;
        let reduction_ratio = if prefix >= 1 && prefix < self.skeleton().total_blocks() {
            Some(
                stats
                    .reduction_ratio(p_num, prefix)
                    .map_err(|e| SuperNetError::Format(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(PruneReport { restricted_sizes, reduction_ratio, params_dropped })
    }

    /// Exact remaining space size under the current prune state.
    pub fn pruned_space_size(&self) -> Result<num_bigint::BigUint, SuperNetError> {
        let stats = SpaceStats::new(&self.opset, self.skeleton())
            .map_err(|e| SuperNetError::Format(e.to_string()))?;
        let restricted: Vec<Option<usize>> = self
            .prune_state
            .iter()
            .map(|s| match s {
                PruneState::Free => None,
                PruneState::Restricted(a) => Some(a.len()),
            })
            .collect();
        Ok(stats.pruned_total(&restricted))
    }

    // --- checkpointing ----------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        push_u32(&mut out, CHECKPOINT_VERSION);
        push_u32(&mut out, self.skeleton().total_blocks() as u32);
        match self.shape.input {
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
        push_u32(&mut out, self.shape.base_width as u32);
        push_u32(&mut out, self.shape.classes as u32);
        let name = self.opset.name().as_bytes();
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name);
        out.extend_from_slice(&self.seed.to_le_bytes());

        for state in &self.prune_state {
            match state {
                PruneState::Free => out.push(0),
                PruneState::Restricted(allowed) => {
                    out.push(1);
                    push_u32(&mut out, allowed.len() as u32);
                    for b in allowed {
                        out.extend_from_slice(
                            &b.encode(self.opset.op_count()).expect("stored blocks are valid"),
                        );
                    }
                }
            }
        }

        push_u32(&mut out, self.store.len() as u32);
        for (key, slot) in self.store.iter() {
            out.extend_from_slice(&key.encode());
            push_u32(&mut out, slot.value.shape().len() as u32);
            for &d in slot.value.shape() {
                push_u32(&mut out, d as u32);
            }
            for &v in slot.value.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for &v in slot.momentum.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let digest = crate::digest::fnv1a64(&out);
        out.extend_from_slice(&digest.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SuperNetError> {
        if bytes.len() < 8 {
            return Err(SuperNetError::Format("checkpoint too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if crate::digest::fnv1a64(body) != stored {
            return Err(SuperNetError::DigestMismatch);
        }
        let mut r = Cursor { data: body, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(SuperNetError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(SuperNetError::VersionMismatch(version));
        }
        let total = r.u32()? as usize;
        let input = match r.u8()? {
            0 => InputShape::Image {
                height: r.u32()? as usize,
                width: r.u32()? as usize,
                channels: r.u32()? as usize,
            },
            1 => InputShape::Vector { dim: r.u32()? as usize },
            t => return Err(SuperNetError::Format(format!("bad input tag {t}"))),
        };
        let base_width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| SuperNetError::Format("bad opset name".into()))?;
        let opset = OpSet::by_name(&name).map_err(|e| SuperNetError::Format(e.to_string()))?;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let skeleton = SkeletonSpec::new(total);
        let shape = ModelShape::new(input, base_width, classes, skeleton);

        let mut prune_state = Vec::with_capacity(total);
        for _ in 0..total {
            match r.u8()? {
                0 => prune_state.push(PruneState::Free),
                1 => {
                    let count = r.u32()? as usize;
                    let mut allowed = Vec::with_capacity(count);
                    for _ in 0..count {
                        let raw = r.take(crate::genome::BLOCK_VEC_LEN)?;
                        allowed.push(BlockGenome::decode(raw, opset.op_count())?);
                    }
                    prune_state.push(PruneState::Restricted(allowed));
                }
                t => return Err(SuperNetError::Format(format!("bad prune tag {t}"))),
            }
        }

        let n_params = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let key_bytes: [u8; 8] = r.take(8)?.try_into().unwrap();
            let key = ParamKey::decode(&key_bytes)
                .ok_or_else(|| SuperNetError::Format("bad param key".into()))?;
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let numel: usize = dims.iter().product();
            let mut value = Vec::with_capacity(numel);
            for _ in 0..numel {
                value.push(f32::from_bits(u32::from_le_bytes(r.take(4)?.try_into().unwrap())));
            }
            let mut momentum = Vec::with_capacity(numel);
            for _ in 0..numel {
                momentum.push(f32::from_bits(u32::from_le_bytes(r.take(4)?.try_into().unwrap())));
            }
            store.insert_slot(
                key,
                Slot {
                    value: Tensor::from_vec(&dims, value),
                    momentum: Tensor::from_vec(&dims, momentum),
                },
            );
        }
        Ok(Self { store, prune_state, shape, opset, seed })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), SuperNetError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, SuperNetError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn accumulate(grads: &mut BTreeMap<ParamKey, Tensor>, key: ParamKey, g: Tensor) {
    match grads.get_mut(&key) {
        Some(a) => nk::add_into(a, &g),
        None => {
            grads.insert(key, g);
        }
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SuperNetError> {
        if self.pos + n > self.data.len() {
            return Err(SuperNetError::Format("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SuperNetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SuperNetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
