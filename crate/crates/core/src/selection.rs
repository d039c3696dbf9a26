//! Two-objective environmental selection: maximize expected accuracy,
//! minimize expected size. Fast nondominated sorting plus crowding-distance
//! fill, with an optional accuracy-protection variant that guarantees the
//! most accurate candidates survive partial-front truncation.

use crate::genome::NetworkGenome;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("individual {0:#018x} has no potential estimate")]
    Unevaluated(u64),
}

/// Expected accuracy / expected size of a (possibly partial) genome over
/// random completions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialEstimate {
    pub exp_acc: f64,
    pub exp_size: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub genome: NetworkGenome,
    pub potential: Option<PotentialEstimate>,
    pub front: Option<usize>,
    pub id: u64,
}

impl Individual {
    pub fn new(genome: NetworkGenome) -> Self {
        let id = genome.canonical_hash();
        Self { genome, potential: None, front: None, id }
    }

    fn estimate(&self) -> Result<PotentialEstimate, SelectionError> {
        self.potential.ok_or(SelectionError::Unevaluated(self.id))
    }
}

pub type Population = Vec<Individual>;

/// Standard two-objective dominance: at least as good in both objectives and
/// strictly better in one.
pub fn dominates(a: &PotentialEstimate, b: &PotentialEstimate) -> bool {
    let no_worse = a.exp_acc >= b.exp_acc && a.exp_size <= b.exp_size;
    let strict = a.exp_acc > b.exp_acc || a.exp_size < b.exp_size;
    no_worse && strict
}

/// Fast nondominated sort; returns fronts as index lists into `pop`,
/// preserving input order within a front.
pub fn nondominated_sort(pop: &[Individual]) -> Result<Vec<Vec<usize>>, SelectionError> {
    let n = pop.len();
    let est: Vec<PotentialEstimate> =
        pop.iter().map(|i| i.estimate()).collect::<Result<_, _>>()?;
    let mut dominated_by: Vec<usize> = vec![0; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&est[i], &est[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&est[j], &est[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of each member of one front. Boundary points in either
/// objective get +infinity.
fn crowding_distances(pop: &[Individual], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0f64; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for objective in 0..2usize {
        let value = |idx: usize| -> f64 {
            let e = pop[front[idx]].potential.expect("sorted population is evaluated");
            if objective == 0 {
                e.exp_acc
            } else {
                e.exp_size
            }
        };
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let span = value(order[m - 1]) - value(order[0]);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        if span > 0.0 {
            for w in 1..m - 1 {
                dist[order[w]] += (value(order[w + 1]) - value(order[w - 1])) / span;
            }
        }
    }
    dist
}

/// Environmental selection down to exactly `p_num` survivors (input returned
/// unchanged when smaller). Sets `front` on every survivor.
pub fn environmental_select(
    mut pool: Population,
    p_num: usize,
    protection: bool,
) -> Result<Population, SelectionError> {
    let fronts = nondominated_sort(&pool)?;
    for (rank, front) in fronts.iter().enumerate() {
        for &i in front {
            pool[i].front = Some(rank);
        }
    }
    if pool.len() <= p_num {
        return Ok(pool);
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(p_num);
    let mut partial: Option<&Vec<usize>> = None;
    for front in &fronts {
        if chosen.len() + front.len() <= p_num {
            chosen.extend_from_slice(front);
        } else {
            partial = Some(front);
            break;
        }
    }
    if let Some(front) = partial {
        let slots = p_num - chosen.len();
        let dist = crowding_distances(&pool, front);
        // Crowding order: descending distance, ties by descending accuracy,
        // then by id.
        let mut crowding_order: Vec<usize> = (0..front.len()).collect();
        crowding_order.sort_by(|&a, &b| {
            dist[b]
                .total_cmp(&dist[a])
                .then_with(|| {
                    let ea = pool[front[a]].potential.unwrap().exp_acc;
                    let eb = pool[front[b]].potential.unwrap().exp_acc;
                    eb.total_cmp(&ea)
                })
                .then_with(|| pool[front[a]].id.cmp(&pool[front[b]].id))
        });
        let mut fill: Vec<usize> = Vec::with_capacity(slots);
        if protection {
            // Accuracy ordering of the same front; the union of the two
            // orderings' prefixes goes in first, so the most accurate
            // member survives regardless of crowding.
            let mut acc_order: Vec<usize> = (0..front.len()).collect();
            acc_order.sort_by(|&a, &b| {
                let ea = pool[front[a]].potential.unwrap().exp_acc;
                let eb = pool[front[b]].potential.unwrap().exp_acc;
                eb.total_cmp(&ea).then_with(|| pool[front[a]].id.cmp(&pool[front[b]].id))
            });
            let mut taken = vec![false; front.len()];
            let mut m = 0;
            loop {
                let mut trial = taken.clone();
                let mut count = fill.len();
                for &w in crowding_order.iter().take(m + 1).chain(acc_order.iter().take(m + 1)) {
                    if !trial[w] {
                        trial[w] = true;
                        count += 1;
                    }
                }
                if count > slots || m + 1 > front.len() {
                    break;
                }
                for w in 0..front.len() {
                    if trial[w] && !taken[w] {
                        taken[w] = true;
                        fill.push(w);
                    }
                }
                m += 1;
            }
            // Remaining slots by crowding order.
            for &w in &crowding_order {
                if fill.len() == slots {
                    break;
                }
                if !taken[w] {
                    taken[w] = true;
                    fill.push(w);
                }
            }
        } else {
            fill.extend(crowding_order.into_iter().take(slots));
        }
        chosen.extend(fill.into_iter().map(|w| front[w]));
    }

    chosen.sort_unstable();
    let mut keep = vec![false; pool.len()];
    for &i in &chosen {
        keep[i] = true;
    }
    let mut out = Vec::with_capacity(p_num);
    for (i, ind) in pool.into_iter().enumerate() {
        if keep[i] {
            out.push(ind);
        }
    }
    debug_assert_eq!(out.len(), p_num);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{NetworkGenome, SkeletonSpec};
    use crate::space::{random_block, OpSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ind(acc: f64, size: f64, rng: &mut ChaCha8Rng) -> Individual {
        let opset = OpSet::vec4();
        let skel = SkeletonSpec::new(1);
        let g = NetworkGenome::new(vec![random_block(&opset, rng)], skel).unwrap();
        let mut i = Individual::new(g);
        i.potential = Some(PotentialEstimate { exp_acc: acc, exp_size: size, n_samples: 1 });
        i
    }

    #[test]
    fn dominance_examples() {
        let a = PotentialEstimate { exp_acc: 0.9, exp_size: 3e6, n_samples: 1 };
        let b = PotentialEstimate { exp_acc: 0.7, exp_size: 4e6, n_samples: 1 };
        let c = PotentialEstimate { exp_acc: 0.8, exp_size: 2e6, n_samples: 1 };
        assert!(dominates(&a, &b));
        assert!(!dominates(&a, &c));
        assert!(!dominates(&c, &a));
        assert!(!dominates(&a, &a));
    }

    #[test]
    fn three_point_fronts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = vec![
            ind(0.9, 3e6, &mut rng),
            ind(0.8, 2e6, &mut rng),
            ind(0.7, 4e6, &mut rng),
        ];
        let fronts = nondominated_sort(&pop).unwrap();
        assert_eq!(fronts, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn single_individual_one_front() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pop = vec![ind(0.5, 1e3, &mut rng)];
        assert_eq!(nondominated_sort(&pop).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn unevaluated_individual_errors() {
        let opset = OpSet::vec4();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = NetworkGenome::new(
            vec![random_block(&opset, &mut rng)],
            SkeletonSpec::new(1),
        )
        .unwrap();
        let pop = vec![Individual::new(g)];
        assert!(matches!(nondominated_sort(&pop), Err(SelectionError::Unevaluated(_))));
    }

    #[test]
    fn select_is_identity_when_input_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pop: Population = (0..5)
            .map(|k| ind(0.1 * k as f64, (k * 100) as f64 + 1.0, &mut rng))
            .collect();
        let ids: Vec<u64> = pop.iter().map(|i| i.id).collect();
        let out = environmental_select(pop, 5, true).unwrap();
        assert_eq!(out.iter().map(|i| i.id).collect::<Vec<_>>(), ids);
    }

    #[test]
    fn front_prefix_property_and_argmax_survival() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pop: Population = (0..20)
                .map(|_| {
                    let acc: f64 = rng.random();
                    let size: f64 = rng.random_range(1.0..1e6);
                    ind(acc, size, &mut rng)
                })
                .collect();
            let best_acc_id = pop
                .iter()
                .max_by(|a, b| {
                    a.potential.unwrap().exp_acc.total_cmp(&b.potential.unwrap().exp_acc)
                })
                .unwrap()
                .id;
            let smallest_id = pop
                .iter()
                .filter(|i| {
                    // Nondominated smallest-size individual.
                    !pop.iter().any(|j| {
                        dominates(&j.potential.unwrap(), &i.potential.unwrap())
                    })
                })
                .min_by(|a, b| {
                    a.potential.unwrap().exp_size.total_cmp(&b.potential.unwrap().exp_size)
                })
                .unwrap()
                .id;
            let fronts = nondominated_sort(&pop).unwrap();
            let front_ids: Vec<Vec<u64>> = fronts
                .iter()
                .map(|f| f.iter().map(|&i| pop[i].id).collect())
                .collect();
            let out = environmental_select(pop, 10, true).unwrap();
            assert_eq!(out.len(), 10);
            assert!(out.iter().any(|i| i.id == best_acc_id), "argmax accuracy survives");
            assert!(out.iter().any(|i| i.id == smallest_id), "smallest nondominated survives");
            // Front-prefix: if any member of front k survives, every member
            // of fronts 0..k survives too.
            let survivor: std::collections::BTreeSet<u64> =
                out.iter().map(|i| i.id).collect();
            let deepest = front_ids
                .iter()
                .rposition(|f| f.iter().any(|id| survivor.contains(id)))
                .unwrap();
            for f in &front_ids[..deepest] {
                assert!(f.iter().all(|id| survivor.contains(id)), "whole-front prefix");
            }
        }
    }
}
