//! Block and network genomes: the 7-node DAG encoding of a searched block,
//! the growing list of blocks that makes up a candidate network, integer-vector
//! codec, canonical hashing and DOT export.
//!
//! A block is a DAG over 7 topologically ordered nodes. Nodes 0 and 1 are the
//! source nodes fed by the two preceding blocks, nodes 2..=5 are hidden nodes
//! with exactly two incoming edges each, and node 6 is the output node which
//! implicitly aggregates all hidden-node outputs. The adjacency matrix is
//! strictly lower-triangular with `matrix[dest][src]` holding the op code of
//! the edge `src -> dest` (0 means no edge).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::digest::Fnv1a64;
use crate::space::OpSet;

/// Nodes per block in the default search space.
pub const NODES: usize = 7;
/// First hidden node index.
pub const FIRST_HIDDEN: usize = 2;
/// Last hidden node index (inclusive).
pub const LAST_HIDDEN: usize = 5;
/// Output node index.
pub const OUTPUT_NODE: usize = 6;
/// Flattened genome vector length for one block.
pub const BLOCK_VEC_LEN: usize = NODES * NODES;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenomeError {
    #[error("entry at dest {dest}, src {src} is above the diagonal (src >= dest must be zero)")]
    UpperTriangle { dest: usize, src: usize },
    #[error("source row {row} must be all zero")]
    SourceRowNonZero { row: usize },
    #[error("output row must be all zero")]
    OutputRowNonZero,
    #[error("hidden node {node} has {count} incoming edges, expected 2")]
    WrongInDegree { node: usize, count: usize },
    #[error("op code {code} at dest {dest}, src {src} exceeds op-set size {k}")]
    OpCodeOutOfRange { dest: usize, src: usize, code: u8, k: u8 },
    #[error("encoded block vector has length {got}, expected {expected}")]
    WrongVectorLength { got: usize, expected: usize },
    #[error("network has {got} blocks but the skeleton allows at most {max}")]
    TooManyBlocks { got: usize, max: usize },
    #[error("network genome text is empty")]
    EmptyNetwork,
    #[error("bad integer {token:?} in genome text")]
    BadInteger { token: String },
}

/// The fixed outer arrangement of a candidate network: `B` block slots with
/// reduction blocks at the 1/3 and 2/3 positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonSpec {
    total_blocks: usize,
    reduction_positions: BTreeSet<usize>,
}

impl SkeletonSpec {
    /// Skeleton with `total_blocks` slots and reductions at floor(B/3) and
    /// floor(2B/3) (0-indexed). Positions that collide or land at 0 for tiny
    /// B are kept as the set they form.
    pub fn new(total_blocks: usize) -> Self {
        assert!(total_blocks >= 1, "skeleton needs at least one block");
        let mut reduction_positions = BTreeSet::new();
        for p in [total_blocks / 3, 2 * total_blocks / 3] {
            if p > 0 && p < total_blocks {
                reduction_positions.insert(p);
            }
        }
        Self { total_blocks, reduction_positions }
    }

    pub fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    pub fn is_reduction(&self, position: usize) -> bool {
        self.reduction_positions.contains(&position)
    }

    pub fn reduction_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.reduction_positions.iter().copied()
    }

    pub fn nodes_per_block(&self) -> usize {
        NODES
    }
}

/// One block's DAG as a 7x7 op-coded adjacency matrix; `matrix[dest][src]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockGenome {
    matrix: [[u8; NODES]; NODES],
}

impl BlockGenome {
    /// Build from a raw matrix, validating every invariant.
    pub fn from_matrix(matrix: [[u8; NODES]; NODES], op_count: u8) -> Result<Self, GenomeError> {
        let g = Self { matrix };
        g.validate(op_count)?;
        Ok(g)
    }

    /// Build without validation. Used by samplers and operators whose
    /// construction is valid by closure; debug builds still check.
    pub(crate) fn from_matrix_unchecked(matrix: [[u8; NODES]; NODES]) -> Self {
        Self { matrix }
    }

    pub fn op_code(&self, dest: usize, src: usize) -> u8 {
        self.matrix[dest][src]
    }

    pub(crate) fn set_op_code(&mut self, dest: usize, src: usize, code: u8) {
        self.matrix[dest][src] = code;
    }

    pub(crate) fn row(&self, dest: usize) -> [u8; NODES] {
        self.matrix[dest]
    }

    pub(crate) fn set_row(&mut self, dest: usize, row: [u8; NODES]) {
        self.matrix[dest] = row;
    }

    /// The two (src, op) pairs feeding a hidden node, in ascending src order.
    pub fn incoming(&self, dest: usize) -> Vec<(usize, u8)> {
        (0..NODES)
            .filter(|&s| self.matrix[dest][s] != 0)
            .map(|s| (s, self.matrix[dest][s]))
            .collect()
    }

    pub fn validate(&self, op_count: u8) -> Result<(), GenomeError> {
        for dest in 0..NODES {
            for src in dest..NODES {
                if self.matrix[dest][src] != 0 {
                    return Err(GenomeError::UpperTriangle { dest, src });
                }
            }
        }
        for row in 0..FIRST_HIDDEN {
            if self.matrix[row].iter().any(|&c| c != 0) {
                return Err(GenomeError::SourceRowNonZero { row });
            }
        }
        if self.matrix[OUTPUT_NODE].iter().any(|&c| c != 0) {
            return Err(GenomeError::OutputRowNonZero);
        }
        for node in FIRST_HIDDEN..=LAST_HIDDEN {
            let nonzero = self.matrix[node].iter().filter(|&&c| c != 0).count();
            if nonzero != 2 {
                return Err(GenomeError::WrongInDegree { node, count: nonzero });
            }
            for src in 0..node {
                let code = self.matrix[node][src];
                if code > op_count {
                    return Err(GenomeError::OpCodeOutOfRange {
                        dest: node,
                        src,
                        code,
                        k: op_count,
                    });
                }
            }
        }
        Ok(())
    }

    /// Row-major flattening of the adjacency matrix.
    pub fn encode(&self, op_count: u8) -> Result<Vec<u8>, GenomeError> {
        self.validate(op_count)?;
        let mut v = Vec::with_capacity(BLOCK_VEC_LEN);
        for row in &self.matrix {
            v.extend_from_slice(row);
        }
        Ok(v)
    }

    /// Inverse of [`encode`](Self::encode); validates before returning.
    pub fn decode(v: &[u8], op_count: u8) -> Result<Self, GenomeError> {
        if v.len() != BLOCK_VEC_LEN {
            return Err(GenomeError::WrongVectorLength { got: v.len(), expected: BLOCK_VEC_LEN });
        }
        let mut matrix = [[0u8; NODES]; NODES];
        for dest in 0..NODES {
            matrix[dest].copy_from_slice(&v[dest * NODES..(dest + 1) * NODES]);
        }
        Self::from_matrix(matrix, op_count)
    }
}

/// A candidate network: an ordered list of blocks that grows one block per
/// stage, plus the skeleton it is growing into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGenome {
    blocks: Vec<BlockGenome>,
    skeleton: SkeletonSpec,
}

impl NetworkGenome {
    pub fn new(blocks: Vec<BlockGenome>, skeleton: SkeletonSpec) -> Result<Self, GenomeError> {
        if blocks.len() > skeleton.total_blocks() {
            return Err(GenomeError::TooManyBlocks {
                got: blocks.len(),
                max: skeleton.total_blocks(),
            });
        }
        Ok(Self { blocks, skeleton })
    }

    pub fn empty(skeleton: SkeletonSpec) -> Self {
        Self { blocks: Vec::new(), skeleton }
    }

    pub fn blocks(&self) -> &[BlockGenome] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &BlockGenome {
        &self.blocks[i]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.blocks.len() == self.skeleton.total_blocks()
    }

    pub fn skeleton(&self) -> &SkeletonSpec {
        &self.skeleton
    }

    pub fn push_block(&mut self, block: BlockGenome) -> Result<(), GenomeError> {
        if self.blocks.len() + 1 > self.skeleton.total_blocks() {
            return Err(GenomeError::TooManyBlocks {
                got: self.blocks.len() + 1,
                max: self.skeleton.total_blocks(),
            });
        }
        self.blocks.push(block);
        Ok(())
    }

    pub(crate) fn replace_block(&mut self, i: usize, block: BlockGenome) {
        self.blocks[i] = block;
    }

    pub fn validate(&self, op_count: u8) -> Result<(), GenomeError> {
        for b in &self.blocks {
            b.validate(op_count)?;
        }
        if self.blocks.len() > self.skeleton.total_blocks() {
            return Err(GenomeError::TooManyBlocks {
                got: self.blocks.len(),
                max: self.skeleton.total_blocks(),
            });
        }
        Ok(())
    }

    /// Stable 64-bit digest over the skeleton and block matrices. FNV-1a over
    /// a fixed byte serialization, so it is identical across runs, platforms
    /// and in-memory layouts.
    pub fn canonical_hash(&self) -> u64 {
        let mut h = Fnv1a64::new();
        h.write_u64(self.skeleton.total_blocks() as u64);
        for p in self.skeleton.reduction_positions() {
            h.write_u64(p as u64);
        }
        h.write_u64(self.blocks.len() as u64);
        for b in &self.blocks {
            for row in &b.matrix {
                h.write_bytes(row);
            }
        }
        h.finish()
    }

    /// Digest over the first `prefix` blocks only; used to assert that
    /// variation operators leave earlier blocks untouched.
    pub fn prefix_hash(&self, prefix: usize) -> u64 {
        let mut h = Fnv1a64::new();
        h.write_u64(prefix as u64);
        for b in &self.blocks[..prefix] {
            for row in &b.matrix {
                h.write_bytes(row);
            }
        }
        h.finish()
    }

    /// Line-oriented text form: one block per line, 49 space-separated ints.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let mut first = true;
            for row in &b.matrix {
                for &c in row {
                    if !first {
                        out.push(' ');
                    }
                    let _ = write!(out, "{c}");
                    first = false;
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(
        text: &str,
        skeleton: SkeletonSpec,
        op_count: u8,
    ) -> Result<Self, GenomeError> {
        let mut blocks = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ints: Result<Vec<u8>, _> = line
                .split_whitespace()
                .map(|t| t.parse::<u8>().map_err(|_| GenomeError::BadInteger { token: t.into() }))
                .collect();
            blocks.push(BlockGenome::decode(&ints?, op_count)?);
        }
        if blocks.is_empty() {
            return Err(GenomeError::EmptyNetwork);
        }
        Self::new(blocks, skeleton)
    }

    /// DOT digraph with one cluster per block and edges labeled by op name.
    pub fn export_dot(&self, opset: &OpSet) -> String {
        let mut out = String::from("digraph network {\n  rankdir=TB;\n");
        for (bi, b) in self.blocks.iter().enumerate() {
            let kind = if self.skeleton.is_reduction(bi) { "reduction" } else { "normal" };
            let _ = writeln!(out, "  subgraph cluster_block{bi} {{");
            let _ = writeln!(out, "    label=\"block {bi} ({kind})\";");
            for node in 0..NODES {
                let _ = writeln!(out, "    b{bi}n{node} [label=\"{node}\"];");
            }
            for dest in FIRST_HIDDEN..=LAST_HIDDEN {
                for (src, code) in b.incoming(dest) {
                    let name = opset.name_of(code).unwrap_or("?");
                    let _ = writeln!(out, "    b{bi}n{src} -> b{bi}n{dest} [label=\"{name}\"];");
                }
            }
            // Implicit aggregation into the output node.
            for node in FIRST_HIDDEN..=LAST_HIDDEN {
                let _ = writeln!(out, "    b{bi}n{node} -> b{bi}n{OUTPUT_NODE} [style=dashed];");
            }
            out.push_str("  }\n");
        }
        // Inter-block wiring: node 0 takes the previous block's output,
        // node 1 the one before that.
        for bi in 1..self.blocks.len() {
            let _ = writeln!(out, "  b{prev}n{OUTPUT_NODE} -> b{bi}n0;", prev = bi - 1);
            if bi >= 2 {
                let _ = writeln!(out, "  b{prev}n{OUTPUT_NODE} -> b{bi}n1;", prev = bi - 2);
            }
        }
        out.push_str("}\n");
        out
    }
}
