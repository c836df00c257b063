//! Multi-fidelity evolutionary neural architecture search.
//!
//! Genomes encode a normal and a reduction cell as variable-length integer
//! vectors. A two-objective NSGA-II loop (validation error, parameter count)
//! evolves them while the shared training level rises from one epoch towards
//! a configurable ceiling, with an archive that keeps eliminated individuals
//! around for re-evaluation at higher fidelity.

pub mod analysis;
pub mod config;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod genome;
pub mod moea;
pub mod multifidelity;
pub mod rng;
pub mod search;
pub mod variation;

pub use config::{EvaluatorSpec, RunConfig};
pub use decoder::{assemble_network, count_parameters, decode_cell, ArchGraph, ArchSettings, NetworkSpec};
pub use error::{Error, Result};
pub use evaluation::{EvalEngine, EvalRequest, EvalResult, Evaluator, TrainReport};
pub use genome::{CellGenome, CellKind, Genome, GenomeId, NodeGene, OperationId};
pub use moea::{ObjectiveVector, RankInfo};
pub use multifidelity::{mf_selection, Archive, Counters, FidelityState, GenerationEvent};
pub use search::{run_baseline, run_search, write_run_dir, SearchResult};
pub use variation::{LinkRate, VariationConfig};
