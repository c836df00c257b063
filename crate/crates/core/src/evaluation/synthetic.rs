//! Deterministic learning-curve stand-in for real training.
//!
//! The validation error of a genome after `e` epochs is
//!
//! ```text
//! error(e) = clamp01(a_inf + (a0 - a_inf) * exp(-e / tau) + noise * z(seed, id, e))
//! ```
//!
//! where `z` is a standard normal draw keyed by `(seed, genome id, epoch)`, so
//! a resumed curve sees exactly the values a fresh one would.
//!
//! Both `a_inf` and `tau` are functions of the architecture. With
//! `sat(x, h) = x / (x + h)`:
//!
//! ```text
//! quality = param_weight * sat(params, param_half)
//!         + depth_weight * sat(depth, depth_half)
//!         + conv_weight  * conv_fraction
//! a_inf   = floor + span * (1 - quality) + quirk * u1
//! tau     = tau_base + tau_param * sat(params, param_half) + tau_quirk * u2
//! ```
//!
//! `u1` in `[-1, 1]` and `u2` in `[0, 1]` are architecture-specific offsets
//! derived from the genome id alone. All coefficients live in
//! [`CurveCoefficients`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EvalRequest, EvalResult, Evaluator, TrainReport};
use crate::decoder::{assemble_network, count_parameters, decode_cell, ArchSettings};
use crate::error::Result;
use crate::genome::{Genome, GenomeId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCoefficients {
    pub initial_error: f64,
    pub floor: f64,
    pub span: f64,
    pub param_weight: f64,
    pub param_half: f64,
    pub depth_weight: f64,
    pub depth_half: f64,
    pub conv_weight: f64,
    pub quirk: f64,
    pub tau_base: f64,
    pub tau_param: f64,
    pub tau_quirk: f64,
}

impl Default for CurveCoefficients {
    fn default() -> Self {
        CurveCoefficients {
            initial_error: 0.9,
            floor: 0.04,
            span: 0.3,
            param_weight: 0.55,
            param_half: 150_000.0,
            depth_weight: 0.25,
            depth_half: 4.0,
            conv_weight: 0.2,
            quirk: 0.01,
            tau_base: 6.0,
            tau_param: 0.5,
            tau_quirk: 0.5,
        }
    }
}

/// Architecture features the curve depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchFeatures {
    pub params: u64,
    /// Sum of the longest node paths of both cells.
    pub depth: usize,
    /// Share of convolution-like nodes over both cells.
    pub conv_fraction: f64,
    pub nodes: usize,
}

impl ArchFeatures {
    pub fn of(genome: &Genome, settings: &ArchSettings) -> Result<Self> {
        let params = count_parameters(&assemble_network(genome, settings)?);
        let normal = decode_cell(genome.normal())?;
        let reduction = decode_cell(genome.reduction())?;
        let cells = [genome.normal(), genome.reduction()];
        let nodes: usize = cells.iter().map(|c| c.node_count()).sum();
        let conv = cells
            .iter()
            .flat_map(|c| c.nodes.iter())
            .filter(|n| n.op.is_convolution())
            .count();
        Ok(ArchFeatures {
            params,
            depth: normal.depth() + reduction.depth(),
            conv_fraction: conv as f64 / nodes as f64,
            nodes,
        })
    }
}

/// Default noise amplitude (standard deviation of the per-epoch perturbation).
pub const DEFAULT_NOISE: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveModel {
    pub seed: u64,
    pub noise: f64,
    pub coefficients: CurveCoefficients,
}

impl CurveModel {
    pub fn new(seed: u64) -> Self {
        CurveModel {
            seed,
            noise: DEFAULT_NOISE,
            coefficients: CurveCoefficients::default(),
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn asymptote(&self, id: GenomeId, f: &ArchFeatures) -> f64 {
        let c = &self.coefficients;
        let quality = c.param_weight * sat(f.params as f64, c.param_half)
            + c.depth_weight * sat(f.depth as f64, c.depth_half)
            + c.conv_weight * f.conv_fraction;
        let u1 = 2.0 * unit_hash(id.0, 0xa1) - 1.0;
        c.floor + c.span * (1.0 - quality) + c.quirk * u1
    }

    pub fn time_constant(&self, id: GenomeId, f: &ArchFeatures) -> f64 {
        let c = &self.coefficients;
        c.tau_base + c.tau_param * sat(f.params as f64, c.param_half) + c.tau_quirk * unit_hash(id.0, 0xb2)
    }

    /// Curve value before noise and clamping.
    pub fn mean_error(&self, id: GenomeId, f: &ArchFeatures, epochs: u32) -> f64 {
        let a_inf = self.asymptote(id, f);
        let a0 = self.coefficients.initial_error;
        a_inf + (a0 - a_inf) * (-(epochs as f64) / self.time_constant(id, f)).exp()
    }

    pub fn error(&self, id: GenomeId, f: &ArchFeatures, epochs: u32) -> f64 {
        let mut e = self.mean_error(id, f, epochs);
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed, id.0), u64::from(epochs)));
            let z: f64 = rng.sample(StandardNormal);
            e += self.noise * z;
        }
        e.clamp(0.0, 1.0)
    }
}

fn sat(x: f64, half: f64) -> f64 {
    x / (x + half)
}

/// SplitMix64 finalizer over the xor of both words.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_hash(id: u64, salt: u64) -> f64 {
    (mix(id, salt) >> 11) as f64 / (1u64 << 53) as f64
}

/// Backend that answers requests from a [`CurveModel`].
#[derive(Clone, Debug)]
pub struct SyntheticEvaluator {
    pub model: CurveModel,
    pub settings: ArchSettings,
}

impl SyntheticEvaluator {
    pub fn new(model: CurveModel, settings: ArchSettings) -> Self {
        SyntheticEvaluator { model, settings }
    }

    pub fn error_at(&self, genome: &Genome, epochs: u32) -> Result<f64> {
        let features = ArchFeatures::of(genome, &self.settings)?;
        Ok(self.model.error(genome.id(), &features, epochs))
    }
}

impl Evaluator for SyntheticEvaluator {
    fn train(&mut self, req: &EvalRequest) -> Result<TrainReport> {
        let genome = Genome::from_flat(&req.nc, &req.rc)?;
        let params = count_parameters(&req.network);
        let mut features = ArchFeatures::of(&genome, &self.settings)?;
        features.params = params;
        Ok(TrainReport {
            val_error: self.model.error(req.genome_id, &features, req.epochs),
            epochs_trained: req.epochs,
            checkpoint_id: format!("syn-{}", req.genome_id),
        })
    }

    fn describe(&self) -> String {
        format!("synthetic:{}", self.model.seed)
    }
}

/// Scores `genome` at `epochs` with the default curve model and search-scale
/// network settings.
pub fn synthetic_evaluate(genome: &Genome, epochs: u32, seed: u64) -> Result<EvalResult> {
    let settings = ArchSettings::default();
    let features = ArchFeatures::of(genome, &settings)?;
    Ok(EvalResult {
        f1: CurveModel::new(seed).error(genome.id(), &features, epochs),
        f2: features.params,
        epochs_trained: epochs,
        checkpoint_id: format!("syn-{}", genome.id()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variation::initialize_population;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Vec<Genome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        initialize_population(n, (5, 12), crate::genome::DEFAULT_NODE_CAP, &mut rng).unwrap()
    }

    #[test]
    fn noiseless_limit_is_the_asymptote() {
        let model = CurveModel::new(1).with_noise(0.0);
        for g in sample(20, 5) {
            let f = ArchFeatures::of(&g, &ArchSettings::default()).unwrap();
            let a_inf = model.asymptote(g.id(), &f);
            // closed form: the gap to a_inf is (a0 - a_inf) * exp(-e / tau)
            let tau = model.time_constant(g.id(), &f);
            let e = 2000;
            let gap = (0.9 - a_inf) * (-(e as f64) / tau).exp();
            assert!((model.error(g.id(), &f, e) - a_inf).abs() <= gap.abs() + 1e-12);
            assert!((model.mean_error(g.id(), &f, e) - a_inf).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_error_is_nonincreasing() {
        let model = CurveModel::new(1).with_noise(0.0);
        for g in sample(20, 6) {
            let f = ArchFeatures::of(&g, &ArchSettings::default()).unwrap();
            for e in 1..40 {
                assert!(model.error(g.id(), &f, e + 1) <= model.error(g.id(), &f, e));
            }
        }
    }

    #[test]
    fn deterministic_per_seed_genome_and_epoch() {
        let g = &sample(1, 8)[0];
        let a = synthetic_evaluate(g, 7, 42).unwrap();
        let b = synthetic_evaluate(g, 7, 42).unwrap();
        assert_eq!(a.f1.to_bits(), b.f1.to_bits());
        assert_eq!(a, b);
        let c = synthetic_evaluate(g, 7, 43).unwrap();
        assert_ne!(a.f1.to_bits(), c.f1.to_bits());
    }

    #[test]
    fn f2_matches_decoder() {
        let g = &sample(1, 9)[0];
        let r = synthetic_evaluate(g, 1, 0).unwrap();
        let expected = count_parameters(&assemble_network(g, &ArchSettings::default()).unwrap());
        assert_eq!(r.f2, expected);
        assert!((0.0..=1.0).contains(&r.f1));
    }
}
