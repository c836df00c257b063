//! Multi-fidelity evaluation based selection.
//!
//! Every generation the parent and offspring populations go through NSGA-II
//! environment selection. Eliminated individuals compete for a bounded
//! archive ranked by their selection history. Every `floor(Gen / MF)`
//! generations the shared training level `S` rises by one epoch, survivors and
//! archive members resume training to the new level and are re-selected
//! together. At the last generation everything still alive is trained to the
//! complete epoch count and selected once more.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalEngine;
use crate::genome::{Genome, GenomeId};
use crate::moea::environment_selection;

/// Selection history of one individual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counters {
    /// Survivals of single-level environment selection.
    pub ss: u32,
    /// Survivals of re-selection after a fidelity increase.
    pub ms: u32,
    /// Eliminations recorded for archived individuals.
    pub me: u32,
}

/// Capacity-bounded store of eliminated but promising individuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub members: Vec<Genome>,
    pub capacity: usize,
}

impl Archive {
    pub fn new(capacity: usize) -> Self {
        Archive {
            members: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<GenomeId> {
        self.members.iter().map(Genome::id).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelityState {
    /// Current training level in epochs.
    pub s: u32,
    /// Number of fidelity levels, also the highest level `s` may reach.
    pub mf: u32,
    pub gen_budget: u32,
    pub complete_epochs: u32,
}

impl FidelityState {
    pub fn new(mf: u32, gen_budget: u32, complete_epochs: u32) -> Result<Self> {
        if mf == 0 {
            return Err(Error::Config("mf must be at least 1".into()));
        }
        if gen_budget == 0 {
            return Err(Error::Config("gen_budget must be at least 1".into()));
        }
        if mf > gen_budget {
            return Err(Error::Config(format!(
                "mf ({mf}) > gen_budget ({gen_budget}): tick interval would be 0"
            )));
        }
        if complete_epochs < mf {
            return Err(Error::Config(format!(
                "complete_epochs ({complete_epochs}) must be at least mf ({mf})"
            )));
        }
        Ok(FidelityState {
            s: 1,
            mf,
            gen_budget,
            complete_epochs,
        })
    }

    /// Generations between two level increases.
    pub fn interval(&self) -> u32 {
        self.gen_budget / self.mf
    }
}

/// Advances the training level at the end of generation `generation` (1-based).
pub fn fidelity_tick(generation: u32, st: &FidelityState) -> Result<FidelityState> {
    let interval = st.interval();
    if interval == 0 {
        return Err(Error::Config(format!(
            "mf ({}) > gen_budget ({}): tick interval would be 0",
            st.mf, st.gen_budget
        )));
    }
    if generation == 0 || generation > st.gen_budget {
        return Err(Error::Config(format!(
            "generation {generation} outside 1..={}",
            st.gen_budget
        )));
    }
    let mut next = *st;
    if generation % interval == 0 && st.s != st.mf {
        next.s += 1;
    }
    Ok(next)
}

/// Survivors gain one single-evaluation survival; eliminated individuals with
/// no recorded elimination get their first.
pub fn record_env_selection(
    mut survivors: Vec<Genome>,
    mut eliminated: Vec<Genome>,
) -> (Vec<Genome>, Vec<Genome>) {
    for g in &mut survivors {
        g.counters.ss += 1;
    }
    for g in &mut eliminated {
        if g.counters.me == 0 {
            g.counters.me = 1;
        }
    }
    (survivors, eliminated)
}

/// Archive ordering key; larger keys are retained first.
///
/// Components in priority order: `ms - me`, `-(ms + me)`, `ss`, parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CriteriaKey(pub i64, pub i64, pub u32, pub u64);

pub fn criteria_key(g: &Genome) -> Result<CriteriaKey> {
    let eval = g.eval.as_ref().ok_or(Error::Unevaluated(g.id()))?;
    let c = g.counters;
    Ok(CriteriaKey(
        i64::from(c.ms) - i64::from(c.me),
        -(i64::from(c.ms) + i64::from(c.me)),
        c.ss,
        eval.f2,
    ))
}

/// Stable descending sort by [`criteria_key`].
pub fn sort_by_criteria(genomes: Vec<Genome>) -> Result<Vec<Genome>> {
    let mut keyed = genomes
        .into_iter()
        .map(|g| criteria_key(&g).map(|k| (k, g)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by_key(|(k, _)| std::cmp::Reverse(*k));
    Ok(keyed.into_iter().map(|(_, g)| g).collect())
}

/// Keeps the `capacity` highest-ranked individuals of the archive plus the
/// newly eliminated ones. Returns the new archive and the discarded rest.
pub fn truncate_archive(archive: Archive, newly_eliminated: Vec<Genome>) -> Result<(Archive, Vec<Genome>)> {
    let capacity = archive.capacity;
    let union: Vec<Genome> = archive.members.into_iter().chain(newly_eliminated).collect();
    let mut sorted = sort_by_criteria(union)?;
    let discarded = sorted.split_off(capacity.min(sorted.len()));
    Ok((
        Archive {
            members: sorted,
            capacity,
        },
        discarded,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub id: GenomeId,
    pub ss: u32,
    pub ms: u32,
    pub me: u32,
}

impl CounterSnapshot {
    pub fn of(g: &Genome) -> Self {
        CounterSnapshot {
            id: g.id(),
            ss: g.counters.ss,
            ms: g.counters.ms,
            me: g.counters.me,
        }
    }
}

/// One line of the per-generation event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationEvent {
    pub generation: u32,
    /// Training level after this generation.
    pub s: u32,
    pub tick: bool,
    pub finalized: bool,
    pub survivors: Vec<GenomeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<Vec<GenomeId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counters: Vec<CounterSnapshot>,
    pub cumulative_epochs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hv_ref_f2: Option<f64>,
}

/// Validation errors of the finalized pool before and after complete training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finalization {
    pub ids: Vec<GenomeId>,
    pub f1_before: Vec<f64>,
    pub f1_after: Vec<f64>,
}

#[derive(Debug)]
pub struct SelectionOutcome {
    pub population: Vec<Genome>,
    pub archive: Archive,
    pub state: FidelityState,
    pub event: GenerationEvent,
    pub finalization: Option<Finalization>,
}

/// Runs one generation of multi-fidelity evaluation based selection.
///
/// `parents` and `offspring` must already be evaluated at `state.s` epochs.
/// The population size is `parents.len()`.
pub fn mf_selection(
    parents: Vec<Genome>,
    offspring: Vec<Genome>,
    archive: Archive,
    generation: u32,
    state: FidelityState,
    engine: &mut EvalEngine,
) -> Result<SelectionOutcome> {
    let pop = parents.len();
    let pool: Vec<Genome> = parents.into_iter().chain(offspring).collect();

    let (survivors, eliminated) = environment_selection(pool, pop)?;
    let (survivors, eliminated) = record_env_selection(survivors, eliminated);
    let (archive, _discarded) = truncate_archive(archive, eliminated)?;

    let next = fidelity_tick(generation, &state)?;
    let tick = next.s != state.s;
    let (mut population, mut archive) = if tick {
        let capacity = archive.capacity;
        let mut both: Vec<Genome> = survivors.into_iter().chain(archive.members).collect();
        engine.evaluate_all(&mut both, next.s)?;
        let (mut p, mut e) = environment_selection(both, pop)?;
        for g in &mut p {
            g.counters.ms += 1;
            g.counters.ss = 0;
        }
        for g in &mut e {
            if g.counters.me == 0 {
                g.counters.ms += 1;
            }
            g.counters.me += 1;
        }
        (p, Archive { members: e, capacity })
    } else {
        (survivors, archive)
    };

    let mut finalization = None;
    if generation == state.gen_budget {
        let capacity = archive.capacity;
        let mut both: Vec<Genome> = population.into_iter().chain(archive.members).collect();
        let ids = both.iter().map(Genome::id).collect();
        let f1_before = both.iter().map(|g| g.eval.as_ref().map_or(f64::NAN, |e| e.f1)).collect();
        engine.evaluate_all(&mut both, state.complete_epochs)?;
        let f1_after = both.iter().map(|g| g.eval.as_ref().map_or(f64::NAN, |e| e.f1)).collect();
        let (p, e) = environment_selection(both, pop)?;
        population = p;
        archive = Archive { members: e, capacity };
        finalization = Some(Finalization {
            ids,
            f1_before,
            f1_after,
        });
    }

    let live: HashSet<GenomeId> = population.iter().chain(&archive.members).map(Genome::id).collect();
    engine.release_except(&live);

    let event = GenerationEvent {
        generation,
        s: next.s,
        tick,
        finalized: finalization.is_some(),
        survivors: population.iter().map(Genome::id).collect(),
        archive: Some(archive.ids()),
        counters: population
            .iter()
            .chain(&archive.members)
            .map(CounterSnapshot::of)
            .collect(),
        cumulative_epochs: engine.epochs_used(),
        hv: None,
        hv_ref_f2: None,
    };
    Ok(SelectionOutcome {
        population,
        archive,
        state: next,
        event,
        finalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::EvalResult;

    fn genome_with(ss: u32, ms: u32, me: u32, f2: u64, tag: u8) -> Genome {
        let mut g = Genome::parse_canonical(&format!("NC=[1,0,{}] RC=[0,1,{}]", tag % 11, tag / 11)).unwrap();
        g.counters = Counters { ss, ms, me };
        g.eval = Some(EvalResult {
            f1: 0.5,
            f2,
            epochs_trained: 1,
            checkpoint_id: String::new(),
        });
        g
    }

    #[test]
    fn counters_after_environment_selection() {
        let fresh = genome_with(0, 0, 0, 1, 0);
        let old = genome_with(0, 0, 2, 1, 1);
        let surv = genome_with(1, 0, 0, 1, 2);
        let (s, e) = record_env_selection(vec![surv], vec![fresh, old]);
        assert_eq!(s[0].counters, Counters { ss: 2, ms: 0, me: 0 });
        assert_eq!(e[0].counters, Counters { ss: 0, ms: 0, me: 1 });
        assert_eq!(e[1].counters, Counters { ss: 0, ms: 0, me: 2 });
    }

    #[test]
    fn criteria_ordering_examples() {
        let a = genome_with(3, 2, 1, 2_900_000, 0);
        let b = genome_with(9, 1, 0, 9_000_000, 1);
        let sorted = sort_by_criteria(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(sorted[0].id(), b.id());

        let big = genome_with(1, 1, 1, 5_000_000, 2);
        let small = genome_with(1, 1, 1, 3_000_000, 3);
        let sorted = sort_by_criteria(vec![small.clone(), big.clone()]).unwrap();
        assert_eq!(sorted[0].id(), big.id());

        let x = genome_with(1, 1, 1, 7, 4);
        let y = genome_with(1, 1, 1, 7, 5);
        let sorted = sort_by_criteria(vec![x.clone(), y.clone()]).unwrap();
        assert_eq!((sorted[0].id(), sorted[1].id()), (x.id(), y.id()));
        let sorted = sort_by_criteria(vec![y.clone(), x.clone()]).unwrap();
        assert_eq!((sorted[0].id(), sorted[1].id()), (y.id(), x.id()));
    }

    #[test]
    fn criteria_requires_evaluation() {
        let mut g = genome_with(0, 0, 0, 1, 0);
        g.eval = None;
        assert!(matches!(criteria_key(&g), Err(Error::Unevaluated(_))));
    }

    #[test]
    fn truncation_edge_cases() {
        let gs: Vec<Genome> = (0..3).map(|i| genome_with(i, 0, 1, 10, i as u8)).collect();
        let (a, gone) = truncate_archive(Archive::new(5), gs.clone()).unwrap();
        assert_eq!(a.len(), 3);
        assert!(gone.is_empty());

        let (a, gone) = truncate_archive(Archive::new(0), gs).unwrap();
        assert!(a.is_empty());
        assert_eq!(gone.len(), 3);
    }

    #[test]
    fn truncation_matches_independent_sort() {
        let gs: Vec<Genome> = (0..30u32)
            .map(|i| genome_with((i * 7) % 4, (i * 5) % 3, (i * 3) % 3, u64::from((i * 11) % 6), i as u8))
            .collect();
        let archive = Archive {
            members: gs[..10].to_vec(),
            capacity: 20,
        };
        let (kept, _) = truncate_archive(archive, gs[10..].to_vec()).unwrap();

        // oracle: score each criterion separately, compare tuple-wise by hand
        let mut oracle: Vec<(usize, &Genome)> = gs.iter().enumerate().collect();
        oracle.sort_by(|(ia, a), (ib, b)| {
            let (ca, cb) = (a.counters, b.counters);
            let first = |c: Counters| c.ms as i64 - c.me as i64;
            let second = |c: Counters| (c.ms + c.me) as i64;
            first(cb)
                .cmp(&first(ca))
                .then(second(ca).cmp(&second(cb)))
                .then(cb.ss.cmp(&ca.ss))
                .then(b.eval.as_ref().unwrap().f2.cmp(&a.eval.as_ref().unwrap().f2))
                .then(ia.cmp(ib))
        });
        let expected: Vec<GenomeId> = oracle.iter().take(20).map(|(_, g)| g.id()).collect();
        assert_eq!(kept.ids(), expected);
    }

    #[test]
    fn ladder_with_default_budget() {
        let mut st = FidelityState::new(6, 25, 25).unwrap();
        let mut ticks = Vec::new();
        for g in 1..=25 {
            let next = fidelity_tick(g, &st).unwrap();
            if next.s != st.s {
                ticks.push(g);
            }
            assert!(next.s >= st.s && next.s <= 6);
            st = next;
        }
        assert_eq!(ticks, vec![4, 8, 12, 16, 20]);
        assert_eq!(st.s, 6);
    }

    #[test]
    fn tick_guards() {
        let st = FidelityState { s: 2, mf: 6, gen_budget: 25, complete_epochs: 25 };
        assert_eq!(fidelity_tick(5, &st).unwrap().s, 2);
        let top = FidelityState { s: 6, ..st };
        assert_eq!(fidelity_tick(24, &top).unwrap().s, 6);
        let bad = FidelityState { mf: 30, ..st };
        assert!(matches!(fidelity_tick(1, &bad), Err(Error::Config(_))));
        assert!(FidelityState::new(30, 25, 25).is_err());
        assert!(FidelityState::new(6, 25, 5).is_err());
    }
}
