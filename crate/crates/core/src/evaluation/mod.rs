//! Evaluator contract, checkpoint bookkeeping and the evaluation engine that
//! ties a backend to the decoder.
//!
//! A backend only reports validation error and the epochs it trained. The
//! parameter count is always computed locally from the decoded network.

mod checkpoint;
pub mod external;
pub mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointStore, LedgerEntry};
pub use external::{ExternalEvaluator, PROTOCOL_VERSION};
pub use synthetic::{synthetic_evaluate, ArchFeatures, CurveCoefficients, CurveModel, SyntheticEvaluator};

use crate::decoder::{assemble_network, count_parameters, ArchSettings, NetworkSpec};
use crate::error::{Error, Result};
use crate::genome::{Genome, GenomeId};
use crate::moea::ObjectiveVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Validation error rate in `[0, 1]`.
    pub f1: f64,
    /// Parameter count.
    pub f2: u64,
    pub epochs_trained: u32,
    pub checkpoint_id: String,
}

impl EvalResult {
    pub fn objectives(&self) -> ObjectiveVector {
        ObjectiveVector::new(self.f1, self.f2 as f64)
    }
}

/// One training request handed to a backend.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    pub genome_id: GenomeId,
    pub nc: Vec<u8>,
    pub rc: Vec<u8>,
    pub network: NetworkSpec,
    /// Total epochs the model should have after this request.
    pub epochs: u32,
    pub resume: bool,
    /// Handle of the checkpoint to continue from when `resume` is set.
    pub checkpoint_id: Option<String>,
}

/// What a backend reports for one request.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub val_error: f64,
    pub epochs_trained: u32,
    pub checkpoint_id: String,
}

pub trait Evaluator: Send {
    fn train(&mut self, req: &EvalRequest) -> Result<TrainReport>;

    /// Short description recorded in run metadata.
    fn describe(&self) -> String;
}

/// Evaluates genomes through a backend while keeping the checkpoint store and
/// the epoch ledger consistent.
pub struct EvalEngine {
    backend: Box<dyn Evaluator>,
    store: CheckpointStore,
    settings: ArchSettings,
}

impl EvalEngine {
    pub fn new(backend: Box<dyn Evaluator>, settings: ArchSettings) -> Self {
        EvalEngine {
            backend,
            store: CheckpointStore::default(),
            settings,
        }
    }

    pub fn settings(&self) -> &ArchSettings {
        &self.settings
    }

    pub fn store(&self) -> &CheckpointStore {
        &self.store
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// Total simulated epochs consumed so far.
    pub fn epochs_used(&self) -> u64 {
        self.store.usage()
    }

    /// Trains `genome` up to `epochs` total epochs, resuming from its stored
    /// checkpoint when one exists.
    pub fn evaluate(&mut self, genome: &Genome, epochs: u32) -> Result<EvalResult> {
        if epochs == 0 {
            return Err(Error::Config("target epochs must be at least 1".into()));
        }
        let id = genome.id();
        let network = assemble_network(genome, &self.settings)?;
        let f2 = count_parameters(&network);

        let previous = self.store.lookup(id).cloned();
        if let Some(prev) = &previous {
            if prev.epochs > epochs {
                return Err(Error::Resume {
                    genome: id,
                    message: format!(
                        "checkpoint holds {} epochs, {} requested",
                        prev.epochs, epochs
                    ),
                });
            }
            if prev.epochs == epochs {
                self.store.record(id, epochs, epochs);
                return Ok(EvalResult {
                    f1: prev.val_error,
                    f2,
                    epochs_trained: epochs,
                    checkpoint_id: prev.handle.clone(),
                });
            }
        }

        let req = EvalRequest {
            genome_id: id,
            nc: genome.normal().flatten(),
            rc: genome.reduction().flatten(),
            network,
            epochs,
            resume: previous.is_some(),
            checkpoint_id: previous.as_ref().map(|p| p.handle.clone()),
        };
        let report = self.backend.train(&req)?;
        if report.epochs_trained != epochs {
            return Err(Error::Protocol(format!(
                "genome {id}: requested {epochs} epochs, trainer reports {}",
                report.epochs_trained
            )));
        }
        if !(0.0..=1.0).contains(&report.val_error) {
            return Err(Error::Protocol(format!(
                "genome {id}: val_error {} outside [0, 1]",
                report.val_error
            )));
        }

        let from = previous.map_or(0, |p| p.epochs);
        self.store.put(
            id,
            Checkpoint {
                handle: report.checkpoint_id.clone(),
                epochs,
                val_error: report.val_error,
            },
        );
        self.store.record(id, from, epochs);
        Ok(EvalResult {
            f1: report.val_error,
            f2,
            epochs_trained: epochs,
            checkpoint_id: report.checkpoint_id,
        })
    }

    /// Evaluates every genome in place, in slice order.
    pub fn evaluate_all(&mut self, genomes: &mut [Genome], epochs: u32) -> Result<()> {
        for g in genomes.iter_mut() {
            let result = self.evaluate(g, epochs)?;
            g.eval = Some(result);
        }
        Ok(())
    }

    /// Releases every stored checkpoint whose genome is not in `live`.
    pub fn release_except(&mut self, live: &HashSet<GenomeId>) -> Vec<GenomeId> {
        self.store.retain(live)
    }
}
