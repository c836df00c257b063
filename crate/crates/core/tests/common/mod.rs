//! Scripted four-individual run shared by the micro-run test and the
//! acceptance suite.

use std::collections::HashMap;
use std::fmt::Write;

use mfenas_core::evaluation::{EvalEngine, EvalRequest, Evaluator, TrainReport};
use mfenas_core::genome::{CellGenome, CellKind, Genome, GenomeId, NodeGene, OperationId};
use mfenas_core::multifidelity::{mf_selection, Archive, FidelityState};
use mfenas_core::{ArchSettings, Result};

pub const GOLDEN: &str = include_str!("../fixtures/micro_run.golden");

/// Epochs the hand simulation charges: 4 + 4 genomes at one epoch, 8 resumed
/// to two, 4 offspring at two, 8 resumed to three.
pub const HAND_EPOCHS: u64 = 4 + 4 + 8 + 4 * 2 + 8;

pub struct MicroRun {
    pub transcript: String,
    pub epochs_used: u64,
    pub ledger_sum: u64,
    pub equal_f2: bool,
}

const F1: [(char, [f64; 3]); 12] = [
    ('A', [0.50, 0.40, 0.30]),
    ('B', [0.60, 0.35, 0.20]),
    ('C', [0.70, 0.65, 0.60]),
    ('D', [0.80, 0.33, 0.25]),
    ('E', [0.55, 0.45, 0.40]),
    ('F', [0.65, 0.30, 0.15]),
    ('G', [0.75, 0.70, 0.68]),
    ('H', [0.85, 0.80, 0.78]),
    ('I', [0.45, 0.42, 0.41]),
    ('J', [0.90, 0.60, 0.50]),
    ('K', [0.52, 0.38, 0.33]),
    ('L', [0.95, 0.90, 0.88]),
];

/// Twelve genomes that differ only in the reduction cell's pooling node, so
/// every parameter count is the same and selection depends on f1 alone.
pub fn genomes() -> Vec<(char, Genome)> {
    let links = [[1u8, 0], [0, 1], [1, 1]];
    let normal = CellGenome::new(
        CellKind::Normal,
        vec![NodeGene::from_bits(&[1, 1], OperationId::CONV_3X3.code()).unwrap()],
    );
    F1.iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let op = 5 + (i % 6) as u8;
            let reduction = CellGenome::new(
                CellKind::Reduction,
                vec![NodeGene::from_bits(&links[i / 6], op).unwrap()],
            );
            (*name, Genome::new(normal.clone(), reduction))
        })
        .collect()
}

struct Scripted {
    table: HashMap<GenomeId, [f64; 3]>,
    trained: HashMap<GenomeId, u32>,
}

impl Evaluator for Scripted {
    fn train(&mut self, req: &EvalRequest) -> Result<TrainReport> {
        let before = self.trained.get(&req.genome_id).copied().unwrap_or(0);
        assert_eq!(req.resume, before > 0, "resume flag for {}", req.genome_id);
        assert!(req.epochs > before);
        self.trained.insert(req.genome_id, req.epochs);
        Ok(TrainReport {
            val_error: self.table[&req.genome_id][req.epochs as usize - 1],
            epochs_trained: req.epochs,
            checkpoint_id: format!("s-{}", req.genome_id),
        })
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

fn render(out: &mut String, label: &str, members: &[Genome], names: &HashMap<GenomeId, char>) {
    write!(out, "  {label}:").unwrap();
    for g in members {
        let c = g.counters;
        let f1 = g.eval.as_ref().unwrap().f1;
        write!(out, " {}[{},{},{}]@{f1:.2}", names[&g.id()], c.ss, c.ms, c.me).unwrap();
    }
    out.push('\n');
}

fn render_store(out: &mut String, engine: &EvalEngine, all: &[(char, Genome)]) {
    let held: Vec<String> = all
        .iter()
        .filter(|(_, g)| engine.store().lookup(g.id()).is_some())
        .map(|(n, _)| n.to_string())
        .collect();
    writeln!(out, "  store: {}", held.join(" ")).unwrap();
}

pub fn micro_run() -> MicroRun {
    let all = genomes();
    let names: HashMap<GenomeId, char> = all.iter().map(|(n, g)| (g.id(), *n)).collect();
    assert_eq!(names.len(), 12, "genomes must be distinct");
    let table = all
        .iter()
        .zip(F1)
        .map(|((_, g), (_, f))| (g.id(), f))
        .collect();
    let backend = Scripted {
        table,
        trained: HashMap::new(),
    };
    let mut engine = EvalEngine::new(Box::new(backend), ArchSettings::default());
    let pick = |range: std::ops::Range<usize>| -> Vec<Genome> { all[range].iter().map(|(_, g)| g.clone()).collect() };

    let mut state = FidelityState::new(2, 2, 3).unwrap();
    let mut population = pick(0..4);
    engine.evaluate_all(&mut population, state.s).unwrap();
    let f2 = population[0].eval.as_ref().unwrap().f2;

    let mut out = String::new();
    out.push_str("# Pop=4 MF=2 Gen=2 complete=3 archive=4, scripted f1, equal f2\n");
    out.push_str("# individuals: letter[ss,ms,me]@f1\n");
    writeln!(out, "init S={} epochs={}", state.s, engine.epochs_used()).unwrap();
    render(&mut out, "P", &population, &names);

    let mut archive = Archive::new(4);
    for (g, offspring) in [(1, 4..8), (2, 8..12)] {
        let mut q = pick(offspring);
        engine.evaluate_all(&mut q, state.s).unwrap();
        let o = mf_selection(population, q, archive, g, state, &mut engine).unwrap();
        let yn = |b: bool| if b { "yes" } else { "no" };
        writeln!(
            out,
            "gen {g} S={} tick={} final={} epochs={}",
            o.state.s,
            yn(o.event.tick),
            yn(o.event.finalized),
            o.event.cumulative_epochs
        )
        .unwrap();
        render(&mut out, "P", &o.population, &names);
        render(&mut out, "E", &o.archive.members, &names);
        render_store(&mut out, &engine, &all);
        population = o.population;
        archive = o.archive;
        state = o.state;
    }

    let equal_f2 = population
        .iter()
        .chain(&archive.members)
        .all(|g| g.eval.as_ref().unwrap().f2 == f2);
    MicroRun {
        transcript: out,
        epochs_used: engine.epochs_used(),
        ledger_sum: engine.store().ledger().iter().map(|e| e.cost()).sum(),
        equal_f2,
    }
}
