//! Search drivers: the multi-fidelity loop, the complete-epoch baseline, and
//! run-directory output.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use serde::Serialize;

use crate::analysis::export_front;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{EvalEngine, LedgerEntry};
use crate::genome::{Genome, GenomeId};
use crate::moea::{binary_tournament, environment_selection, normalized_hypervolume, objectives, rank_population};
use crate::multifidelity::{mf_selection, Archive, Finalization, FidelityState, GenerationEvent};
use crate::rng::{substream, INIT, TOURNAMENT, VARIATION};
use crate::variation::{initialize_population, make_offspring};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Mfenas,
    Baseline,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub kind: RunKind,
    pub population: Vec<Genome>,
    /// Empty for baseline runs.
    pub archive: Archive,
    pub events: Vec<GenerationEvent>,
    pub ledger: Vec<LedgerEntry>,
    pub total_epochs: u64,
    pub finalization: Option<Finalization>,
    pub evaluator: String,
}

/// Tracks the largest parameter count seen so far; the hypervolume reference
/// uses 1.1 times that value on the f2 axis.
#[derive(Default)]
struct HvTracker {
    max_f2: f64,
}

impl HvTracker {
    fn observe(&mut self, genomes: &[Genome]) {
        for g in genomes {
            if let Some(e) = &g.eval {
                self.max_f2 = self.max_f2.max(e.f2 as f64);
            }
        }
    }

    fn annotate(&self, event: &mut GenerationEvent, pop: &[Genome]) -> Result<()> {
        let scale = 1.1 * self.max_f2.max(1.0);
        event.hv = Some(normalized_hypervolume(&objectives(pop)?, scale));
        event.hv_ref_f2 = Some(scale);
        Ok(())
    }
}

/// Multi-fidelity search with the engine's evaluator.
pub fn run_search(cfg: &RunConfig, engine: &mut EvalEngine) -> Result<SearchResult> {
    cfg.validate()?;
    let mut init_rng = substream(cfg.seed, INIT);
    let mut var_rng = substream(cfg.seed, VARIATION);
    let mut tour_rng = substream(cfg.seed, TOURNAMENT);
    let mut state = FidelityState::new(cfg.mf, cfg.gen_budget, cfg.complete_epochs)?;
    let mut tracker = HvTracker::default();

    let mut population = initialize_population(
        cfg.pop_size,
        cfg.node_range,
        cfg.variation.node_cap,
        &mut init_rng,
    )?;
    engine.evaluate_all(&mut population, state.s)?;
    tracker.observe(&population);
    let mut archive = Archive::new(cfg.archive_capacity());
    let mut events = Vec::with_capacity(cfg.gen_budget as usize);
    let mut finalization = None;

    for g in 1..=cfg.gen_budget {
        let ranks = rank_population(&population)?;
        let parents = binary_tournament(&population, &ranks, cfg.pop_size, &mut tour_rng);
        let mut offspring = make_offspring(&parents, &cfg.variation, &mut var_rng)?;
        engine.evaluate_all(&mut offspring, state.s)?;
        tracker.observe(&offspring);

        let out = mf_selection(population, offspring, archive, g, state, engine)?;
        population = out.population;
        archive = out.archive;
        state = out.state;
        tracker.observe(&population);
        tracker.observe(&archive.members);
        let mut event = out.event;
        tracker.annotate(&mut event, &population)?;
        info!(
            "generation {g}: S={} epochs={} hv={:.4}",
            event.s,
            event.cumulative_epochs,
            event.hv.unwrap_or(f64::NAN)
        );
        events.push(event);
        if out.finalization.is_some() {
            finalization = out.finalization;
        }
    }

    Ok(SearchResult {
        kind: RunKind::Mfenas,
        population,
        archive,
        events,
        ledger: engine.store().ledger().to_vec(),
        total_epochs: engine.epochs_used(),
        finalization,
        evaluator: engine.describe(),
    })
}

/// The same loop with every evaluation at complete epochs and plain NSGA-II
/// environment selection.
pub fn run_baseline(cfg: &RunConfig, engine: &mut EvalEngine) -> Result<SearchResult> {
    cfg.validate()?;
    let mut init_rng = substream(cfg.seed, INIT);
    let mut var_rng = substream(cfg.seed, VARIATION);
    let mut tour_rng = substream(cfg.seed, TOURNAMENT);
    let epochs = cfg.complete_epochs;
    let mut tracker = HvTracker::default();

    let mut population = initialize_population(
        cfg.pop_size,
        cfg.node_range,
        cfg.variation.node_cap,
        &mut init_rng,
    )?;
    engine.evaluate_all(&mut population, epochs)?;
    tracker.observe(&population);
    let mut events = Vec::with_capacity(cfg.gen_budget as usize);

    for g in 1..=cfg.gen_budget {
        let ranks = rank_population(&population)?;
        let parents = binary_tournament(&population, &ranks, cfg.pop_size, &mut tour_rng);
        let mut offspring = make_offspring(&parents, &cfg.variation, &mut var_rng)?;
        engine.evaluate_all(&mut offspring, epochs)?;
        tracker.observe(&offspring);

        let pool: Vec<Genome> = population.into_iter().chain(offspring).collect();
        let (survivors, _) = environment_selection(pool, cfg.pop_size)?;
        population = survivors;
        let live: HashSet<GenomeId> = population.iter().map(Genome::id).collect();
        engine.release_except(&live);

        let mut event = GenerationEvent {
            generation: g,
            s: epochs,
            tick: false,
            finalized: g == cfg.gen_budget,
            survivors: population.iter().map(Genome::id).collect(),
            archive: None,
            counters: Vec::new(),
            cumulative_epochs: engine.epochs_used(),
            hv: None,
            hv_ref_f2: None,
        };
        tracker.annotate(&mut event, &population)?;
        events.push(event);
    }

    Ok(SearchResult {
        kind: RunKind::Baseline,
        population,
        archive: Archive::new(0),
        events,
        ledger: engine.store().ledger().to_vec(),
        total_epochs: engine.epochs_used(),
        finalization: None,
        evaluator: engine.describe(),
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: RunKind,
    evaluator: &'a str,
    seed: u64,
    generations: u32,
    final_population: usize,
    archive: usize,
    total_epochs: u64,
    final_hv: Option<f64>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

/// Writes a run directory:
///
/// - `config.txt`: effective configuration
/// - `events.jsonl`: one generation event per line
/// - `ledger.csv`: `genome_id,from_epochs,to_epochs,cost`
/// - `final_population.jsonl`, `archive.jsonl`
/// - `front.csv` and `dot/` from [`export_front`]
/// - `summary.json`
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, result: &SearchResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    write_jsonl(&dir.join("events.jsonl"), &result.events)?;

    let mut ledger = Vec::new();
    writeln!(ledger, "genome_id,from_epochs,to_epochs,cost").expect("write to Vec");
    for e in &result.ledger {
        writeln!(ledger, "{},{},{},{}", e.genome, e.from_epochs, e.to_epochs, e.cost()).expect("write to Vec");
    }
    write_file(&dir.join("ledger.csv"), &ledger)?;

    write_jsonl(&dir.join("final_population.jsonl"), &result.population)?;
    if result.kind == RunKind::Mfenas {
        write_jsonl(&dir.join("archive.jsonl"), &result.archive.members)?;
    }
    if let Some(fin) = &result.finalization {
        write_file(&dir.join("finalization.json"), &serde_json::to_vec_pretty(fin)?)?;
    }
    export_front(&result.population, dir)?;

    let summary = Summary {
        kind: result.kind,
        evaluator: &result.evaluator,
        seed: cfg.seed,
        generations: cfg.gen_budget,
        final_population: result.population.len(),
        archive: result.archive.len(),
        total_epochs: result.total_epochs,
        final_hv: result.events.last().and_then(|e| e.hv),
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_file(&dir.join("summary.json"), &json)
}

/// Reads a population written by [`write_run_dir`].
pub fn read_population(path: &Path) -> Result<Vec<Genome>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            pop_size: 6,
            gen_budget: 6,
            mf: 3,
            complete_epochs: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn search_keeps_population_size_and_finalizes() {
        let cfg = small();
        let mut engine = cfg.build_engine().unwrap();
        let r = run_search(&cfg, &mut engine).unwrap();
        assert_eq!(r.population.len(), 6);
        assert_eq!(r.events.len(), 6);
        assert!(r.population.iter().all(|g| g.eval.as_ref().unwrap().epochs_trained == 5));
        let fin = r.finalization.unwrap();
        assert_eq!(fin.ids.len(), fin.f1_after.len());
        assert_eq!(r.ledger.iter().map(LedgerEntry::cost).sum::<u64>(), r.total_epochs);
    }

    #[test]
    fn baseline_ledger_is_closed_form() {
        let cfg = small();
        let mut engine = cfg.build_engine().unwrap();
        let r = run_baseline(&cfg, &mut engine).unwrap();
        let evaluations = cfg.pop_size as u64 * (u64::from(cfg.gen_budget) + 1);
        assert_eq!(r.ledger.len() as u64, evaluations);
        // duplicates already trained to complete epochs cost nothing
        assert!(r.total_epochs <= evaluations * u64::from(cfg.complete_epochs));
        assert!(r.events.iter().all(|e| e.archive.is_none()));
    }

    #[test]
    fn same_seed_same_events() {
        let cfg = small();
        let a = run_search(&cfg, &mut cfg.build_engine().unwrap()).unwrap();
        let b = run_search(&cfg, &mut cfg.build_engine().unwrap()).unwrap();
        assert_eq!(
            serde_json::to_string(&a.events).unwrap(),
            serde_json::to_string(&b.events).unwrap()
        );
    }

    #[test]
    fn run_dir_round_trips_population() {
        let cfg = small();
        let r = run_search(&cfg, &mut cfg.build_engine().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &cfg, &r).unwrap();
        for f in ["config.txt", "events.jsonl", "ledger.csv", "front.csv", "summary.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let back = read_population(&dir.path().join("final_population.jsonl")).unwrap();
        assert_eq!(back, r.population);
    }
}
