//! The block search space: the operation set on edges, uniform samplers for
//! blocks and networks, exact candidate counting and the pruning reduction
//! ratio, plus the width/shape rules that turn a genome into parameter counts.

use num_bigint::BigUint;
use num_rational::BigRational;
use rand::Rng;

use crate::genome::{
    BlockGenome, GenomeError, NetworkGenome, SkeletonSpec, FIRST_HIDDEN, LAST_HIDDEN, NODES,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpaceError {
    #[error("op set is empty")]
    EmptyOpSet,
    #[error("unknown op set {0:?}")]
    UnknownOpSet(String),
    #[error("partial network longer than skeleton")]
    PartialTooLong,
    #[error("reduction ratio needs 1 <= pruned prefix < B, got {got} with B = {total}")]
    BadPrunedPrefix { got: usize, total: usize },
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

/// What an edge operation does to its input, and what parameters it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Emits zeros of the input shape. A real op, distinct from "no edge".
    Zero,
    Identity,
    /// k x k convolution (same padding, stride 1) followed by ReLU.
    Conv { kernel: usize },
    /// k x k average pooling, same padding, stride 1. Parameter-free.
    AvgPool { kernel: usize },
    /// Fully connected layer followed by the given activation.
    Dense { activation: Activation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpDescriptor {
    pub code: u8,
    pub name: &'static str,
    pub kind: OpKind,
}

impl OpDescriptor {
    /// Parameters this op carries on an edge at channel/feature width `w`.
    pub fn param_count(&self, width: usize) -> u64 {
        let w = width as u64;
        match self.kind {
            OpKind::Zero | OpKind::Identity | OpKind::AvgPool { .. } => 0,
            OpKind::Conv { kernel } => (kernel * kernel) as u64 * w * w + w,
            OpKind::Dense { .. } => w * w + w,
        }
    }
}

/// Ordered, immutable operation set; codes are 1..=K, code 0 means "no edge".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpSet {
    name: &'static str,
    ops: Vec<OpDescriptor>,
}

impl OpSet {
    /// Convolutional set: zero, identity, 3x3 conv+ReLU, 1x1 conv+ReLU,
    /// 3x3 average pool.
    pub fn conv5() -> Self {
        Self {
            name: "conv5",
            ops: vec![
                OpDescriptor { code: 1, name: "zero", kind: OpKind::Zero },
                OpDescriptor { code: 2, name: "identity", kind: OpKind::Identity },
                OpDescriptor { code: 3, name: "conv3x3", kind: OpKind::Conv { kernel: 3 } },
                OpDescriptor { code: 4, name: "conv1x1", kind: OpKind::Conv { kernel: 1 } },
                OpDescriptor { code: 5, name: "avgpool3x3", kind: OpKind::AvgPool { kernel: 3 } },
            ],
        }
    }

    /// Vector set for fast tests: zero, identity, dense+ReLU, dense+tanh.
    pub fn vec4() -> Self {
        Self {
            name: "vec4",
            ops: vec![
                OpDescriptor { code: 1, name: "zero", kind: OpKind::Zero },
                OpDescriptor { code: 2, name: "identity", kind: OpKind::Identity },
                OpDescriptor {
                    code: 3,
                    name: "dense_relu",
                    kind: OpKind::Dense { activation: Activation::Relu },
                },
                OpDescriptor {
                    code: 4,
                    name: "dense_tanh",
                    kind: OpKind::Dense { activation: Activation::Tanh },
                },
            ],
        }
    }

    /// Single-op set (identity only); the topology-only space used by the
    /// brute-force enumeration harness.
    pub fn id1() -> Self {
        Self {
            name: "id1",
            ops: vec![OpDescriptor { code: 1, name: "identity", kind: OpKind::Identity }],
        }
    }

    pub fn by_name(name: &str) -> Result<Self, SpaceError> {
        match name {
            "conv5" => Ok(Self::conv5()),
            "vec4" => Ok(Self::vec4()),
            "id1" => Ok(Self::id1()),
            other => Err(SpaceError::UnknownOpSet(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn op_count(&self) -> u8 {
        self.ops.len() as u8
    }

    pub fn descriptor(&self, code: u8) -> Option<&OpDescriptor> {
        self.ops.get(code.checked_sub(1)? as usize)
    }

    pub fn name_of(&self, code: u8) -> Option<&'static str> {
        self.descriptor(code).map(|d| d.name)
    }

    pub fn descriptors(&self) -> &[OpDescriptor] {
        &self.ops
    }

    /// True for ops whose edge carries trainable parameters.
    pub fn is_parametric(&self, code: u8) -> bool {
        self.descriptor(code).map(|d| d.param_count(1) > 0).unwrap_or(false)
    }

    pub fn is_vector_mode(&self) -> bool {
        self.ops.iter().all(|d| !matches!(d.kind, OpKind::Conv { .. } | OpKind::AvgPool { .. }))
    }
}

/// Uniform sample over all valid blocks: each hidden node picks two distinct
/// sources among its predecessors, each edge an op code from 1..=K.
pub fn random_block<R: Rng + ?Sized>(opset: &OpSet, rng: &mut R) -> BlockGenome {
    let k = opset.op_count();
    assert!(k >= 1, "op set must be nonempty");
    let mut m = [[0u8; NODES]; NODES];
    for dest in FIRST_HIDDEN..=LAST_HIDDEN {
        let (a, b) = distinct_pair(dest, rng);
        m[dest][a] = rng.random_range(1..=k);
        m[dest][b] = rng.random_range(1..=k);
    }
    BlockGenome::from_matrix_unchecked(m)
}

fn distinct_pair<R: Rng + ?Sized>(bound: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..bound);
    let mut b = rng.random_range(0..bound - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// Exhaustive enumeration of every valid block: all distinct source-pair
/// choices per hidden node times all op assignments on the chosen edges.
/// Intended for small op sets; the result has `count_block_genomes` entries.
pub fn enumerate_blocks(opset: &OpSet) -> Result<Vec<BlockGenome>, SpaceError> {
    let k = opset.op_count();
    if k == 0 {
        return Err(SpaceError::EmptyOpSet);
    }
    let mut stack: Vec<[[u8; NODES]; NODES]> = vec![[[0; NODES]; NODES]];
    for node in FIRST_HIDDEN..=LAST_HIDDEN {
        let mut pairs = Vec::new();
        for a in 0..node {
            for b in (a + 1)..node {
                pairs.push((a, b));
            }
        }
        let mut next = Vec::with_capacity(stack.len() * pairs.len() * (k as usize).pow(2));
        for m in &stack {
            for &(a, b) in &pairs {
                for op_a in 1..=k {
                    for op_b in 1..=k {
                        let mut m2 = *m;
                        m2[node][a] = op_a;
                        m2[node][b] = op_b;
                        next.push(m2);
                    }
                }
            }
        }
        stack = next;
    }
    stack
        .into_iter()
        .map(|m| BlockGenome::from_matrix(m, k).map_err(SpaceError::from))
        .collect()
}

/// Exact block-space size: (prod over hidden nodes i of C(i,2)) * K^8.
pub fn count_block_genomes(opset: &OpSet) -> Result<BigUint, SpaceError> {
    let k = opset.op_count() as u64;
    if k == 0 {
        return Err(SpaceError::EmptyOpSet);
    }
    let mut topologies = BigUint::from(1u32);
    for node in FIRST_HIDDEN..=LAST_HIDDEN {
        let n = node as u64;
        topologies *= BigUint::from(n * (n - 1) / 2);
    }
    let edges = 2 * (LAST_HIDDEN - FIRST_HIDDEN + 1) as u32;
    Ok(topologies * BigUint::from(k).pow(edges))
}

/// Fill a partial network up to the skeleton's block count with random blocks.
/// The existing prefix is preserved bit-identically.
pub fn complete_network<R: Rng + ?Sized>(
    partial: &NetworkGenome,
    opset: &OpSet,
    rng: &mut R,
) -> Result<NetworkGenome, SpaceError> {
    let total = partial.skeleton().total_blocks();
    if partial.len() > total {
        return Err(SpaceError::PartialTooLong);
    }
    let mut full = partial.clone();
    while full.len() < total {
        full.push_block(random_block(opset, rng))?;
    }
    Ok(full)
}

/// Per-block candidate counts and totals, exact.
#[derive(Debug, Clone)]
pub struct SpaceStats {
    per_block_count: Vec<BigUint>,
}

/// Result of evaluating the pruning reduction ratio.
#[derive(Debug, Clone)]
pub struct ReductionRatio {
    pub ratio: BigRational,
    /// True when the population size exceeded some block's candidate count
    /// and the numerator factor was clamped to the full block space.
    pub clamped: bool,
}

impl SpaceStats {
    pub fn new(opset: &OpSet, skeleton: &SkeletonSpec) -> Result<Self, SpaceError> {
        let c = count_block_genomes(opset)?;
        Ok(Self { per_block_count: vec![c; skeleton.total_blocks()] })
    }

    /// Stats with explicit per-block counts; used by tests exercising the
    /// ratio arithmetic directly.
    pub fn with_counts(per_block_count: Vec<BigUint>) -> Self {
        Self { per_block_count }
    }

    pub fn per_block_count(&self) -> &[BigUint] {
        &self.per_block_count
    }

    pub fn total(&self) -> BigUint {
        self.per_block_count.iter().product()
    }

    /// Remaining fraction of the weight-sharing space after restricting the
    /// first `pruned_prefix` blocks to at most `p_num` candidates each:
    /// p_num^i * prod_{j>i} C_j / prod_j C_j, exact.
    pub fn reduction_ratio(
        &self,
        p_num: usize,
        pruned_prefix: usize,
    ) -> Result<ReductionRatio, SpaceError> {
        let total_blocks = self.per_block_count.len();
        if pruned_prefix < 1 || pruned_prefix >= total_blocks {
            return Err(SpaceError::BadPrunedPrefix { got: pruned_prefix, total: total_blocks });
        }
        let p = BigUint::from(p_num);
        let mut numer = BigUint::from(1u32);
        let mut clamped = false;
        for (j, c) in self.per_block_count.iter().enumerate() {
            if j < pruned_prefix {
                if &p > c {
                    clamped = true;
                    numer *= c;
                } else {
                    numer *= &p;
                }
            } else {
                numer *= c;
            }
        }
        let ratio = BigRational::new(numer.into(), self.total().into());
        Ok(ReductionRatio { ratio, clamped })
    }

    /// Exact space size after pruning, given the restricted candidate-set
    /// size per block (None for free blocks).
    pub fn pruned_total(&self, restricted: &[Option<usize>]) -> BigUint {
        self.per_block_count
            .iter()
            .zip(restricted)
            .map(|(c, r)| match r {
                Some(n) => BigUint::from(*n).min(c.clone()),
                None => c.clone(),
            })
            .product()
    }
}

/// Input layout of the realized network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    /// Height x width x channels image.
    Image { height: usize, width: usize, channels: usize },
    /// Flat feature vector.
    Vector { dim: usize },
}

impl InputShape {
    pub fn feature_count(&self) -> usize {
        match *self {
            InputShape::Image { height, width, channels } => height * width * channels,
            InputShape::Vector { dim } => dim,
        }
    }
}

/// Width and resolution rules for realizing a genome: the stem maps the
/// input to `base_width`; each reduction block halves the spatial resolution
/// and doubles the width (image mode) or keeps the width (vector mode).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub input: InputShape,
    pub base_width: usize,
    pub classes: usize,
    pub skeleton: SkeletonSpec,
    vector_mode: bool,
}

impl ModelShape {
    pub fn new(input: InputShape, base_width: usize, classes: usize, skeleton: SkeletonSpec) -> Self {
        let vector_mode = matches!(input, InputShape::Vector { .. });
        Self { input, base_width, classes, skeleton, vector_mode }
    }

    pub fn is_vector_mode(&self) -> bool {
        self.vector_mode
    }

    /// Operating width of block `i`.
    pub fn block_width(&self, i: usize) -> usize {
        if self.vector_mode {
            return self.base_width;
        }
        let reductions = (0..=i).filter(|&p| self.skeleton.is_reduction(p)).count();
        self.base_width << reductions
    }

    /// Output widths of the two inputs feeding block `i` (node 0 from block
    /// i-1, node 1 from block i-2; the stem stands in below block 0).
    pub fn block_input_widths(&self, i: usize) -> (usize, usize) {
        let w = |j: isize| {
            if j < 0 {
                self.base_width
            } else {
                self.block_width(j as usize)
            }
        };
        (w(i as isize - 1), w(i as isize - 2))
    }

    /// Spatial side lengths (h, w) at which block `i` operates (image mode).
    pub fn block_resolution(&self, i: usize) -> (usize, usize) {
        let (mut h, mut w) = match self.input {
            InputShape::Image { height, width, .. } => (height, width),
            InputShape::Vector { .. } => (1, 1),
        };
        for p in 0..=i {
            if self.skeleton.is_reduction(p) {
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
        }
        (h, w)
    }

    pub fn stem_params(&self) -> u64 {
        let w0 = self.base_width as u64;
        match self.input {
            InputShape::Image { channels, .. } => 9 * channels as u64 * w0 + w0,
            InputShape::Vector { dim } => dim as u64 * w0 + w0,
        }
    }

    pub fn classifier_params(&self) -> u64 {
        let last = self.skeleton.total_blocks() - 1;
        let w = self.block_width(last) as u64;
        w * self.classes as u64 + self.classes as u64
    }

    /// Preprocessor (1x1 conv / dense) parameters mapping an input of width
    /// `in_w` into block `i`'s width.
    pub fn preproc_params(&self, i: usize, in_w: usize) -> u64 {
        let w = self.block_width(i) as u64;
        in_w as u64 * w + w
    }

    /// Output projection parameters for block `i` (concat of 4 hidden nodes
    /// back to block width).
    pub fn projection_params(&self, i: usize) -> u64 {
        let w = self.block_width(i) as u64;
        4 * w * w + w
    }
}

/// Exact parameter count of a realized complete network.
pub fn param_count(n: &NetworkGenome, shape: &ModelShape, opset: &OpSet) -> u64 {
    debug_assert!(n.is_complete(), "param_count expects a complete network");
    let mut total = shape.stem_params() + shape.classifier_params();
    for (i, block) in n.blocks().iter().enumerate() {
        let w = shape.block_width(i);
        let (in0, in1) = shape.block_input_widths(i);
        total += shape.preproc_params(i, in0) + shape.preproc_params(i, in1);
        total += shape.projection_params(i);
        for dest in FIRST_HIDDEN..=LAST_HIDDEN {
            for (_, code) in block.incoming(dest) {
                if let Some(d) = opset.descriptor(code) {
                    total += d.param_count(w);
                }
            }
        }
    }
    total
}
