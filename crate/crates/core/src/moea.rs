//! NSGA-II machinery over the (validation error, parameter count) objectives.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::Genome;

/// Both objectives are minimized. `f2` is the raw parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub f1: f64,
    pub f2: f64,
}

impl ObjectiveVector {
    pub fn new(f1: f64, f2: f64) -> Self {
        ObjectiveVector { f1, f2 }
    }

    fn get(&self, m: usize) -> f64 {
        if m == 0 {
            self.f1
        } else {
            self.f2
        }
    }
}

/// Pareto dominance: no worse in both objectives and not equal.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    a.f1 <= b.f1 && a.f2 <= b.f2 && (a.f1 < b.f1 || a.f2 < b.f2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    /// 1-based front index.
    pub front: usize,
    pub crowding: f64,
}

/// Front index (1-based) of every point.
pub fn fast_non_dominated_sort(points: &[ObjectiveVector]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }

    let mut front_of = vec![0usize; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    let mut rank = 1;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            front_of[i] = rank;
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        current = next;
        rank += 1;
    }
    front_of
}

/// Crowding distance of each member of a single front.
///
/// Boundary points get `+inf`; interior points sum their neighbour gaps per
/// objective, normalized by the objective's range on the front. An objective
/// with zero range contributes nothing.
pub fn crowding_distance(front: &[ObjectiveVector]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for m in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            front[a]
                .get(m)
                .total_cmp(&front[b].get(m))
                .then(a.cmp(&b))
        });
        let lo = front[order[0]].get(m);
        let hi = front[order[n - 1]].get(m);
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let gap = front[order[w + 1]].get(m) - front[order[w - 1]].get(m);
            distance[order[w]] += gap / range;
        }
    }
    distance
}

/// Front and crowding distance for every point.
pub fn rank_points(points: &[ObjectiveVector]) -> Vec<RankInfo> {
    let fronts = fast_non_dominated_sort(points);
    let mut ranks = vec![
        RankInfo {
            front: 0,
            crowding: 0.0
        };
        points.len()
    ];
    let max_front = fronts.iter().copied().max().unwrap_or(0);
    for f in 1..=max_front {
        let members: Vec<usize> = (0..points.len()).filter(|&i| fronts[i] == f).collect();
        let sub: Vec<ObjectiveVector> = members.iter().map(|&i| points[i]).collect();
        for (&i, c) in members.iter().zip(crowding_distance(&sub)) {
            ranks[i] = RankInfo { front: f, crowding: c };
        }
    }
    ranks
}

/// Indices (ascending) of the `n` points NSGA-II environment selection keeps.
///
/// Whole fronts are taken while they fit; the front that overflows is cut by
/// descending crowding distance, ties going to the earlier index.
pub fn select_indices(points: &[ObjectiveVector], n: usize) -> Result<Vec<usize>> {
    if points.len() < n {
        return Err(Error::InsufficientPool {
            needed: n,
            available: points.len(),
        });
    }
    let fronts = fast_non_dominated_sort(points);
    let mut chosen = Vec::with_capacity(n);
    let mut f = 1;
    while chosen.len() < n {
        let members: Vec<usize> = (0..points.len()).filter(|&i| fronts[i] == f).collect();
        if chosen.len() + members.len() <= n {
            chosen.extend(members);
        } else {
            let sub: Vec<ObjectiveVector> = members.iter().map(|&i| points[i]).collect();
            let crowd = crowding_distance(&sub);
            let mut order: Vec<usize> = (0..members.len()).collect();
            order.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
            let missing = n - chosen.len();
            chosen.extend(order.into_iter().take(missing).map(|k| members[k]));
        }
        f += 1;
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn objectives(genomes: &[Genome]) -> Result<Vec<ObjectiveVector>> {
    genomes
        .iter()
        .map(|g| {
            g.eval
                .as_ref()
                .map(|e| e.objectives())
                .ok_or(Error::Unevaluated(g.id()))
        })
        .collect()
}

/// Splits `pool` into `n` survivors and the eliminated rest, both in pool order.
pub fn environment_selection(pool: Vec<Genome>, n: usize) -> Result<(Vec<Genome>, Vec<Genome>)> {
    let points = objectives(&pool)?;
    let keep = select_indices(&points, n)?;
    let mut keep_mask = vec![false; pool.len()];
    for i in keep {
        keep_mask[i] = true;
    }
    let (mut survivors, mut eliminated) = (Vec::with_capacity(n), Vec::new());
    for (g, kept) in pool.into_iter().zip(keep_mask) {
        if kept {
            survivors.push(g);
        } else {
            eliminated.push(g);
        }
    }
    Ok((survivors, eliminated))
}

pub fn rank_population(pop: &[Genome]) -> Result<Vec<RankInfo>> {
    Ok(rank_points(&objectives(pop)?))
}

/// Lower front wins, then larger crowding distance.
fn compare_rank(a: &RankInfo, b: &RankInfo) -> Ordering {
    b.front
        .cmp(&a.front)
        .then(a.crowding.total_cmp(&b.crowding))
}

/// Picks `n` parents by binary tournament on (front, crowding); full ties are
/// settled by a fair coin.
pub fn binary_tournament<R: Rng + ?Sized>(
    pop: &[Genome],
    ranks: &[RankInfo],
    n: usize,
    rng: &mut R,
) -> Vec<Genome> {
    tournament_indices(ranks, n, rng)
        .into_iter()
        .map(|i| pop[i].clone())
        .collect()
}

pub fn tournament_indices<R: Rng + ?Sized>(ranks: &[RankInfo], n: usize, rng: &mut R) -> Vec<usize> {
    let len = ranks.len();
    assert!(len > 0, "tournament over an empty population");
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..len);
            let b = if len > 1 {
                let b = rng.random_range(0..len - 1);
                if b >= a {
                    b + 1
                } else {
                    b
                }
            } else {
                a
            };
            match compare_rank(&ranks[a], &ranks[b]) {
                Ordering::Greater => a,
                Ordering::Less => b,
                Ordering::Equal => {
                    if rng.random_bool(0.5) {
                        a
                    } else {
                        b
                    }
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypervolume {
    pub value: f64,
    /// Indices of points that do not dominate the reference point.
    pub skipped: Vec<usize>,
}

/// Exact two-objective hypervolume by sorting on `f1` and sweeping.
pub fn hypervolume(points: &[ObjectiveVector], reference: &ObjectiveVector) -> Hypervolume {
    let mut skipped = Vec::new();
    let mut inside: Vec<ObjectiveVector> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if p.f1 <= reference.f1 && p.f2 <= reference.f2 {
            inside.push(*p);
        } else {
            skipped.push(i);
        }
    }
    inside.sort_by(|a, b| a.f1.total_cmp(&b.f1).then(a.f2.total_cmp(&b.f2)));
    let mut value = 0.0;
    let mut best_f2 = reference.f2;
    for p in &inside {
        if p.f2 < best_f2 {
            value += (reference.f1 - p.f1) * (best_f2 - p.f2);
            best_f2 = p.f2;
        }
    }
    Hypervolume { value, skipped }
}

/// Hypervolume after dividing `f2` by `f2_scale`, against the reference
/// point (1, 1). The reporting convention uses `f2_scale` equal to 1.1 times
/// the largest parameter count observed.
pub fn normalized_hypervolume(points: &[ObjectiveVector], f2_scale: f64) -> f64 {
    let scaled: Vec<ObjectiveVector> = points
        .iter()
        .map(|p| ObjectiveVector::new(p.f1, p.f2 / f2_scale))
        .collect();
    hypervolume(&scaled, &ObjectiveVector::new(1.0, 1.0)).value
}
