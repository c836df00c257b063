use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::GenomeId;

/// Trained state of one genome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub handle: String,
    pub epochs: u32,
    /// Validation error observed at `epochs`.
    pub val_error: f64,
}

/// One evaluation as seen by the budget ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub genome: GenomeId,
    pub from_epochs: u32,
    pub to_epochs: u32,
}

impl LedgerEntry {
    pub fn cost(&self) -> u64 {
        u64::from(self.to_epochs - self.from_epochs)
    }
}

/// Checkpoints keyed by genome id plus the cumulative epoch ledger.
///
/// Genomes with identical genotypes share one checkpoint.
#[derive(Clone, Debug, Default)]
pub struct CheckpointStore {
    checkpoints: HashMap<GenomeId, Checkpoint>,
    ledger: Vec<LedgerEntry>,
    total_epochs: u64,
}

impl CheckpointStore {
    pub fn put(&mut self, id: GenomeId, checkpoint: Checkpoint) {
        self.checkpoints.insert(id, checkpoint);
    }

    pub fn get(&self, id: GenomeId) -> Result<&Checkpoint> {
        self.checkpoints.get(&id).ok_or(Error::MissingCheckpoint(id))
    }

    pub fn lookup(&self, id: GenomeId) -> Option<&Checkpoint> {
        self.checkpoints.get(&id)
    }

    pub fn release(&mut self, id: GenomeId) -> Option<Checkpoint> {
        self.checkpoints.remove(&id)
    }

    /// Releases every checkpoint not in `live`; returns the released ids in order.
    pub fn retain(&mut self, live: &HashSet<GenomeId>) -> Vec<GenomeId> {
        let mut gone: Vec<GenomeId> = self
            .checkpoints
            .keys()
            .filter(|id| !live.contains(id))
            .copied()
            .collect();
        gone.sort_unstable();
        for id in &gone {
            self.checkpoints.remove(id);
        }
        gone
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn record(&mut self, genome: GenomeId, from_epochs: u32, to_epochs: u32) {
        let entry = LedgerEntry {
            genome,
            from_epochs,
            to_epochs,
        };
        self.total_epochs += entry.cost();
        self.ledger.push(entry);
    }

    /// Cumulative simulated epochs.
    pub fn usage(&self) -> u64 {
        self.total_epochs
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }
}
