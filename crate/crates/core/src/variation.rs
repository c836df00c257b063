//! Population initialization and genetic operators.

use log::debug;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{node_offset, CellGenome, CellKind, Genome, NodeGene, OperationId, DEFAULT_NODE_CAP};

/// Per-bit link flip probability: a fixed rate, or one over the number of
/// link bits in the cell so that about one link flips per mutation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LinkRate {
    PerLength,
    Fixed(f64),
}

impl LinkRate {
    pub fn for_cell(self, cell: &CellGenome) -> f64 {
        match self {
            LinkRate::PerLength => {
                let bits: usize = cell.nodes.iter().map(|n| n.links.len()).sum();
                1.0 / bits.max(1) as f64
            }
            LinkRate::Fixed(p) => p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    pub p_crossover: f64,
    /// Probability of inter-cell (rather than intra-cell) crossover.
    pub p_inter: f64,
    pub p_link: LinkRate,
    /// Per-node probability of resampling the operation.
    pub p_op: f64,
    /// Per-cell probability of appending a node.
    pub p_add: f64,
    pub node_cap: usize,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig {
            p_crossover: 0.9,
            p_inter: 0.5,
            p_link: LinkRate::PerLength,
            p_op: 0.1,
            p_add: 0.2,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

impl VariationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut probs = vec![
            ("p_crossover", self.p_crossover),
            ("p_inter", self.p_inter),
            ("p_op", self.p_op),
            ("p_add", self.p_add),
        ];
        if let LinkRate::Fixed(p) = self.p_link {
            probs.push(("p_link", p));
        }
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.node_cap == 0 {
            return Err(Error::Config("node_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Probability with which an initial operation is swapped for one of the
/// cell's preferred class.
const REPLACE_PROBABILITY: f64 = 0.5;

const CONV_CODES: [u8; 4] = [1, 2, 3, 4];
const POOL_CODES: [u8; 6] = [5, 6, 7, 8, 9, 10];

fn random_op<R: Rng + ?Sized>(rng: &mut R) -> OperationId {
    OperationId::new(rng.random_range(0..OperationId::COUNT)).expect("code in range")
}

fn pick<R: Rng + ?Sized>(codes: &[u8], rng: &mut R) -> OperationId {
    OperationId::new(*codes.choose(rng).expect("non-empty")).expect("code in range")
}

/// Creates `pop_size` individuals whose link structure shifts from chains
/// (index 1) towards wide fan-in from the cell inputs (last index).
///
/// For individual `i` (1-based) with `prob = i / pop_size`, each node's last
/// link bit is set with probability `1 - prob`, its first two bits each with
/// probability `prob` and any other bit with probability 1/2. Normal cells
/// lean towards convolutions and reduction cells towards pooling.
pub fn initialize_population<R: Rng + ?Sized>(
    pop_size: usize,
    node_range: (usize, usize),
    node_cap: usize,
    rng: &mut R,
) -> Result<Vec<Genome>> {
    let (lo, hi) = node_range;
    if pop_size == 0 {
        return Err(Error::Config("pop_size must be at least 1".into()));
    }
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("empty node range [{lo}, {hi}]")));
    }
    if hi > node_cap {
        return Err(Error::Config(format!(
            "node range upper bound {hi} exceeds node cap {node_cap}"
        )));
    }
    let mut pop = Vec::with_capacity(pop_size);
    for i in 1..=pop_size {
        let prob = i as f64 / pop_size as f64;
        let n_normal = rng.random_range(lo..=hi);
        let n_reduction = rng.random_range(lo..=hi);
        let normal = initial_cell(CellKind::Normal, n_normal, prob, rng);
        let reduction = initial_cell(CellKind::Reduction, n_reduction, prob, rng);
        pop.push(Genome::new(normal, reduction));
    }
    Ok(pop)
}

fn initial_cell<R: Rng + ?Sized>(kind: CellKind, n: usize, prob: f64, rng: &mut R) -> CellGenome {
    let mut nodes: Vec<NodeGene> = (0..n)
        .map(|k| NodeGene::new(vec![false; k + 2], OperationId::IDENTITY))
        .collect();
    for node in &mut nodes {
        let last = node.links.len() - 1;
        if rng.random_bool(1.0 - prob) {
            node.links[last] = true;
        }
    }
    for node in &mut nodes {
        for bit in 0..2 {
            if rng.random_bool(prob) {
                node.links[bit] = true;
            }
        }
    }
    for node in &mut nodes {
        let last = node.links.len() - 1;
        for bit in 2..last {
            if rng.random_bool(0.5) {
                node.links[bit] = true;
            }
        }
    }
    for node in &mut nodes {
        node.op = random_op(rng);
    }
    let preferred: &[u8] = match kind {
        CellKind::Normal => &CONV_CODES,
        CellKind::Reduction => &POOL_CODES,
    };
    for node in &mut nodes {
        if rng.random_bool(REPLACE_PROBABILITY) {
            node.op = pick(preferred, rng);
        }
    }
    repair(CellGenome::new(kind, nodes), rng)
}

/// Gives every node without links exactly one uniformly chosen link.
pub fn repair<R: Rng + ?Sized>(mut cell: CellGenome, rng: &mut R) -> CellGenome {
    for node in &mut cell.nodes {
        if !node.has_links() && !node.links.is_empty() {
            let bit = rng.random_range(0..node.links.len());
            node.links[bit] = true;
        }
    }
    cell
}

/// Swaps the reduction cells of two parents.
pub fn inter_cell_crossover(p1: &Genome, p2: &Genome) -> (Genome, Genome) {
    (
        Genome::new(p1.normal().clone(), p2.reduction().clone()),
        Genome::new(p2.normal().clone(), p1.reduction().clone()),
    )
}

/// Intra-cell crossover with an explicit crossover point `ri` (1-based,
/// `1..=len(longer)`). Outputs follow the input order and are not repaired.
pub fn intra_cell_crossover_at(c1: &CellGenome, c2: &CellGenome, ri: usize) -> (CellGenome, CellGenome) {
    let swapped = c1.node_count() > c2.node_count();
    let (short, long) = if swapped { (c2, c1) } else { (c1, c2) };
    let n_short = short.node_count();
    let short_len = node_offset(n_short);
    let long_len = node_offset(long.node_count());
    debug_assert!((1..=long_len).contains(&ri), "crossover point {ri} outside 1..={long_len}");

    let (new_short, new_long) = if ri <= short_len {
        // Node layouts agree position by position, so a prefix exchange
        // always yields well-formed encodings of the original sizes.
        let mut a = short.flatten();
        let mut b = long.flatten();
        a[..ri].swap_with_slice(&mut b[..ri]);
        (
            CellGenome::parse(short.kind, &a).expect("prefix exchange keeps layout"),
            CellGenome::parse(long.kind, &b).expect("prefix exchange keeps layout"),
        )
    } else {
        let k = (n_short..long.node_count())
            .find(|&k| node_offset(k) < ri && ri <= node_offset(k + 1))
            .expect("crossover point lies inside the longer cell");
        let donor = &long.nodes[k];
        let mut grown = short.clone();
        grown
            .nodes
            .push(NodeGene::new(donor.links[..n_short + 2].to_vec(), donor.op));
        (grown, long.clone())
    };
    if swapped {
        (new_long, new_short)
    } else {
        (new_short, new_long)
    }
}

/// Single-point crossover or one-way node transfer, chosen by a crossover
/// point drawn uniformly from `1..=len(longer)`. Outputs are repaired.
pub fn intra_cell_crossover<R: Rng + ?Sized>(
    c1: &CellGenome,
    c2: &CellGenome,
    rng: &mut R,
) -> (CellGenome, CellGenome) {
    let long_len = node_offset(c1.node_count().max(c2.node_count()));
    let ri = rng.random_range(1..=long_len);
    let (a, b) = intra_cell_crossover_at(c1, c2, ri);
    (repair(a, rng), repair(b, rng))
}

/// Flips each link bit with `p_link` and resamples each operation with `p_op`
/// (uniformly among the other ten codes), then repairs.
pub fn single_point_mutation<R: Rng + ?Sized>(cell: &CellGenome, cfg: &VariationConfig, rng: &mut R) -> CellGenome {
    let p_link = cfg.p_link.for_cell(cell);
    let mut out = cell.clone();
    for node in &mut out.nodes {
        for bit in node.links.iter_mut() {
            if rng.random_bool(p_link) {
                *bit = !*bit;
            }
        }
        if rng.random_bool(cfg.p_op) {
            let current = node.op.code();
            let mut code = rng.random_range(0..OperationId::COUNT - 1);
            if code >= current {
                code += 1;
            }
            node.op = OperationId::new(code).expect("code in range");
        }
    }
    repair(out, rng)
}

/// Appends one random node unless the cell already has `node_cap` nodes.
pub fn add_node_mutation<R: Rng + ?Sized>(cell: &CellGenome, node_cap: usize, rng: &mut R) -> CellGenome {
    let n = cell.node_count();
    if n >= node_cap {
        debug!("add-node skipped: {} cell already at the cap of {node_cap} nodes", cell.kind.as_str());
        return cell.clone();
    }
    let links = (0..n + 2).map(|_| rng.random_bool(0.5)).collect();
    let mut out = cell.clone();
    out.nodes.push(NodeGene::new(links, random_op(rng)));
    repair(out, rng)
}

fn mutate_cell<R: Rng + ?Sized>(cell: &CellGenome, cfg: &VariationConfig, rng: &mut R) -> CellGenome {
    let mutated = single_point_mutation(cell, cfg, rng);
    if rng.random_bool(cfg.p_add) {
        add_node_mutation(&mutated, cfg.node_cap, rng)
    } else {
        mutated
    }
}

/// Builds one offspring per parent from consecutive parent pairs.
pub fn make_offspring<R: Rng + ?Sized>(parents: &[Genome], cfg: &VariationConfig, rng: &mut R) -> Result<Vec<Genome>> {
    if parents.len() < 2 || parents.len() % 2 != 0 {
        return Err(Error::Config(format!(
            "offspring generation needs an even number (>= 2) of parents, got {}",
            parents.len()
        )));
    }
    let mut out = Vec::with_capacity(parents.len());
    for pair in parents.chunks_exact(2) {
        let (p1, p2) = (&pair[0], &pair[1]);
        let (mut n1, mut r1, mut n2, mut r2) = (
            p1.normal().clone(),
            p1.reduction().clone(),
            p2.normal().clone(),
            p2.reduction().clone(),
        );
        if rng.random_bool(cfg.p_crossover) {
            if rng.random_bool(cfg.p_inter) {
                std::mem::swap(&mut r1, &mut r2);
            } else {
                (n1, n2) = intra_cell_crossover(&n1, &n2, rng);
                (r1, r2) = intra_cell_crossover(&r1, &r2, rng);
            }
        }
        for (n, r) in [(n1, r1), (n2, r2)] {
            let n = mutate_cell(&n, cfg, rng);
            let r = mutate_cell(&r, cfg, rng);
            out.push(Genome::new(n, r));
        }
    }
    Ok(out)
}
