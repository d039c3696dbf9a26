//! Genetic operators. Every operator touches only the newest (growing) block
//! of a genome; earlier blocks are copied bit-identically.

use std::collections::BTreeSet;

use rand::Rng;

use crate::genome::{NetworkGenome, FIRST_HIDDEN, LAST_HIDDEN};
use crate::selection::{Individual, Population};
use crate::space::OpSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VariationError {
    #[error("parents have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("operator expects genomes of stage {stage}, got length {got}")]
    WrongStage { stage: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationParams {
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub dedup_retries: usize,
}

impl Default for VariationParams {
    fn default() -> Self {
        Self { crossover_rate: 0.9, mutation_rate: 0.2, dedup_retries: 3 }
    }
}

/// Constrained uniform crossover on the latest block: each hidden-node row
/// (both edges and their ops) swaps between the children with probability
/// `rate`. Row-granular swaps keep every child valid without repair.
pub fn crossover<R: Rng + ?Sized>(
    p1: &NetworkGenome,
    p2: &NetworkGenome,
    stage: usize,
    rate: f64,
    rng: &mut R,
) -> Result<(NetworkGenome, NetworkGenome), VariationError> {
    if p1.len() != stage {
        return Err(VariationError::WrongStage { stage, got: p1.len() });
    }
    crossover_at(p1, p2, stage - 1, rate, rng)
}

/// [`crossover`] acting on an arbitrary block index instead of the newest
/// block; used by the flat (non-growing) evolutionary baseline.
pub fn crossover_at<R: Rng + ?Sized>(
    p1: &NetworkGenome,
    p2: &NetworkGenome,
    block: usize,
    rate: f64,
    rng: &mut R,
) -> Result<(NetworkGenome, NetworkGenome), VariationError> {
    if p1.len() != p2.len() {
        return Err(VariationError::LengthMismatch { a: p1.len(), b: p2.len() });
    }
    if block >= p1.len() {
        return Err(VariationError::WrongStage { stage: block + 1, got: p1.len() });
    }
    let mut c1 = p1.clone();
    let mut c2 = p2.clone();
    let latest = block;
    let mut b1 = *p1.block(latest);
    let mut b2 = *p2.block(latest);
    for node in FIRST_HIDDEN..=LAST_HIDDEN {
        if rng.random_bool(rate) {
            let row1 = b1.row(node);
            b1.set_row(node, b2.row(node));
            b2.set_row(node, row1);
        }
    }
    c1.replace_block(latest, b1);
    c2.replace_block(latest, b2);
    Ok((c1, c2))
}

/// Re-source one edge of one hidden node in the latest block to a new valid
/// predecessor; the edge's op code is carried over. Nodes whose predecessors
/// are all in use already (only node 2 can be in that state) are skipped; if
/// no node has an alternative the input is returned unchanged.
pub fn mutate_connection<R: Rng + ?Sized>(
    n: &NetworkGenome,
    stage: usize,
    rng: &mut R,
) -> Result<NetworkGenome, VariationError> {
    if n.len() != stage {
        return Err(VariationError::WrongStage { stage, got: n.len() });
    }
    mutate_connection_at(n, stage - 1, rng)
}

/// [`mutate_connection`] on an arbitrary block index.
pub fn mutate_connection_at<R: Rng + ?Sized>(
    n: &NetworkGenome,
    block: usize,
    rng: &mut R,
) -> Result<NetworkGenome, VariationError> {
    if block >= n.len() {
        return Err(VariationError::WrongStage { stage: block + 1, got: n.len() });
    }
    let latest = block;
    let mut block = *n.block(latest);
    let mut nodes: Vec<usize> = (FIRST_HIDDEN..=LAST_HIDDEN).collect();
    while !nodes.is_empty() {
        let pick = rng.random_range(0..nodes.len());
        let node = nodes.swap_remove(pick);
        let incoming = block.incoming(node);
        let used: Vec<usize> = incoming.iter().map(|&(s, _)| s).collect();
        let alternatives: Vec<usize> = (0..node).filter(|s| !used.contains(s)).collect();
        if alternatives.is_empty() {
            continue;
        }
        let (old_src, op) = incoming[rng.random_range(0..incoming.len())];
        let new_src = alternatives[rng.random_range(0..alternatives.len())];
        block.set_op_code(node, old_src, 0);
        block.set_op_code(node, new_src, op);
        let mut out = n.clone();
        out.replace_block(latest, block);
        return Ok(out);
    }
    Ok(n.clone())
}

/// Change the op code of one uniformly chosen edge in the latest block to a
/// different code; topology untouched. With a single-op set this is the
/// identity.
pub fn mutate_operation<R: Rng + ?Sized>(
    n: &NetworkGenome,
    stage: usize,
    opset: &OpSet,
    rng: &mut R,
) -> Result<NetworkGenome, VariationError> {
    if n.len() != stage {
        return Err(VariationError::WrongStage { stage, got: n.len() });
    }
    mutate_operation_at(n, stage - 1, opset, rng)
}

/// [`mutate_operation`] on an arbitrary block index.
pub fn mutate_operation_at<R: Rng + ?Sized>(
    n: &NetworkGenome,
    block: usize,
    opset: &OpSet,
    rng: &mut R,
) -> Result<NetworkGenome, VariationError> {
    if block >= n.len() {
        return Err(VariationError::WrongStage { stage: block + 1, got: n.len() });
    }
    let k = opset.op_count();
    if k <= 1 {
        return Ok(n.clone());
    }
    let latest = block;
    let mut block = *n.block(latest);
    let edges: Vec<(usize, usize, u8)> = (FIRST_HIDDEN..=LAST_HIDDEN)
        .flat_map(|node| {
            block.incoming(node).into_iter().map(move |(src, op)| (node, src, op))
        })
        .collect();
    let (node, src, old_op) = edges[rng.random_range(0..edges.len())];
    let mut new_op = rng.random_range(1..k);
    if new_op >= old_op {
        new_op += 1;
    }
    block.set_op_code(node, src, new_op);
    let mut out = n.clone();
    out.replace_block(latest, block);
    Ok(out)
}

/// Produce one offspring per population member: pick two distinct parents
/// uniformly, cross with probability `crossover_rate`, apply each mutation
/// kind independently with probability `mutation_rate`, and regenerate
/// duplicates (against parents and earlier offspring) up to the retry limit
/// before admitting them anyway.
pub fn generate_offspring<R: Rng + ?Sized>(
    pop: &Population,
    stage: usize,
    opset: &OpSet,
    params: VariationParams,
    rng: &mut R,
) -> Result<Vec<Individual>, VariationError> {
    if let Some(first) = pop.first() {
        if first.genome.len() != stage {
            return Err(VariationError::WrongStage { stage, got: first.genome.len() });
        }
    }
    offspring_with_block_choice(pop, opset, params, rng, |_rng| stage - 1)
}

/// Offspring generation for the flat (non-growing) baseline: each child's
/// crossover and mutations act on one uniformly chosen block.
pub fn generate_offspring_flat<R: Rng + ?Sized>(
    pop: &Population,
    opset: &OpSet,
    params: VariationParams,
    rng: &mut R,
) -> Result<Vec<Individual>, VariationError> {
    let len = pop.first().map(|i| i.genome.len()).unwrap_or(0);
    offspring_with_block_choice(pop, opset, params, rng, move |rng| rng.random_range(0..len))
}

fn offspring_with_block_choice<R: Rng + ?Sized>(
    pop: &Population,
    opset: &OpSet,
    params: VariationParams,
    rng: &mut R,
    mut choose_block: impl FnMut(&mut R) -> usize,
) -> Result<Vec<Individual>, VariationError> {
    assert!(!pop.is_empty(), "population must be nonempty");
    let mut seen: BTreeSet<u64> = pop.iter().map(|i| i.id).collect();
    let mut offspring = Vec::with_capacity(pop.len());

    let mut make_child = |rng: &mut R| -> Result<NetworkGenome, VariationError> {
        let block = choose_block(rng);
        let i = rng.random_range(0..pop.len());
        let j = if pop.len() == 1 {
            i
        } else {
            let mut j = rng.random_range(0..pop.len() - 1);
            if j >= i {
                j += 1;
            }
            j
        };
        let (c1, c2) = if rng.random_bool(params.crossover_rate) {
            crossover_at(&pop[i].genome, &pop[j].genome, block, 0.5, rng)?
        } else {
            (pop[i].genome.clone(), pop[j].genome.clone())
        };
        let mut child = if rng.random_bool(0.5) { c1 } else { c2 };
        if rng.random_bool(params.mutation_rate) {
            child = mutate_connection_at(&child, block, rng)?;
        }
        if rng.random_bool(params.mutation_rate) {
            child = mutate_operation_at(&child, block, opset, rng)?;
        }
        Ok(child)
    };

    for _ in 0..pop.len() {
        let mut child = make_child(rng)?;
        for _ in 0..params.dedup_retries {
            if !seen.contains(&child.canonical_hash()) {
                break;
            }
            child = make_child(rng)?;
        }
        seen.insert(child.canonical_hash());
        offspring.push(Individual::new(child));
    }
    Ok(offspring)
}
