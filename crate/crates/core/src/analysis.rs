//! Rank correlation, ranking studies, fidelity sweeps and front export.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::decoder::{to_dot, ArchSettings};
use crate::error::{Error, Result};
use crate::evaluation::{ArchFeatures, CurveModel};
use crate::genome::{format_flat, Genome, GenomeId};
use crate::moea::{fast_non_dominated_sort, objectives};
use crate::rng::{substream, STUDY};
use crate::search::{run_baseline, run_search};
use crate::variation::initialize_population;

/// Genome ids ordered by ascending score, ties broken by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking(Vec<GenomeId>);

impl Ranking {
    /// Ranks `ids` by `scores`. Repeated ids keep their first score.
    pub fn from_scores(ids: &[GenomeId], scores: &[f64]) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::RankingMismatch);
        }
        let mut seen = HashSet::new();
        let mut pairs: Vec<(f64, GenomeId)> = ids
            .iter()
            .zip(scores)
            .filter(|(id, _)| seen.insert(**id))
            .map(|(id, s)| (*s, *id))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Ranking(pairs.into_iter().map(|(_, id)| id).collect()))
    }

    /// Uses `order` as given; ids must be distinct.
    pub fn from_order(order: Vec<GenomeId>) -> Result<Self> {
        let distinct: HashSet<_> = order.iter().collect();
        if distinct.len() != order.len() {
            return Err(Error::RankingMismatch);
        }
        Ok(Ranking(order))
    }

    pub fn ids(&self) -> &[GenomeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Ranking {
        Ranking(self.0.iter().rev().copied().collect())
    }
}

/// Kendall's τ-a between two rankings of the same id set, in O(n log n).
///
/// Rankings with fewer than two items count as identical.
pub fn kendall_tau(r1: &Ranking, r2: &Ranking) -> Result<f64> {
    if r1.len() != r2.len() {
        return Err(Error::RankingMismatch);
    }
    let position: HashMap<GenomeId, usize> = r2.ids().iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut seq = Vec::with_capacity(r1.len());
    for id in r1.ids() {
        seq.push(*position.get(id).ok_or(Error::RankingMismatch)?);
    }
    let n = seq.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let pairs = n * (n - 1) / 2;
    let discordant = count_inversions(&mut seq);
    let concordant = pairs - discordant;
    Ok((concordant as f64 - discordant as f64) / pairs as f64)
}

fn count_inversions(v: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            merged.push(v[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    count
}

/// Average ranks, 1-based.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ with average ranks for ties. NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Samples `n_arch` genomes with 5 to 12 nodes per cell, scores them with
/// `model` at every epoch in `1..=max_epochs` and returns τ(e vs max_epochs).
pub fn ranking_study_with(
    n_arch: usize,
    max_epochs: u32,
    seed: u64,
    model: &CurveModel,
    settings: &ArchSettings,
) -> Result<Vec<f64>> {
    if max_epochs == 0 {
        return Ok(Vec::new());
    }
    let mut rng = substream(seed, STUDY);
    let genomes = initialize_population(n_arch.max(1), (5, 12), crate::genome::DEFAULT_NODE_CAP, &mut rng)?;
    let mut ids = Vec::with_capacity(genomes.len());
    let mut features = Vec::with_capacity(genomes.len());
    let mut seen = HashSet::new();
    for g in genomes.iter().take(n_arch) {
        if seen.insert(g.id()) {
            ids.push(g.id());
            features.push(ArchFeatures::of(g, settings)?);
        }
    }
    let ranking_at = |e: u32| -> Result<Ranking> {
        let scores: Vec<f64> = ids.iter().zip(&features).map(|(id, f)| model.error(*id, f, e)).collect();
        Ranking::from_scores(&ids, &scores)
    };
    let reference = ranking_at(max_epochs)?;
    (1..=max_epochs)
        .map(|e| kendall_tau(&ranking_at(e)?, &reference))
        .collect()
}

/// [`ranking_study_with`] on the default synthetic model seeded by `seed`.
pub fn ranking_study(n_arch: usize, max_epochs: u32, seed: u64) -> Result<Vec<f64>> {
    ranking_study_with(n_arch, max_epochs, seed, &CurveModel::new(seed), &ArchSettings::default())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSeed {
    pub seed: u64,
    pub epochs: u64,
    pub baseline_epochs: u64,
    pub reduction: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub mf: u32,
    /// Median over seeds of `1 - epochs / baseline_epochs`.
    pub reduction: f64,
    /// Median over seeds of τ between the fidelity-limited and complete-epoch
    /// rankings of the finalized pool.
    pub tau: f64,
    pub runs: Vec<SweepSeed>,
}

/// Runs one baseline and one search per MF value for every seed.
///
/// Only the synthetic evaluator is supported; `base.evaluator` is replaced
/// by a synthetic one whose noise seed follows each run seed.
pub fn fidelity_sweep(base: &RunConfig, mf_values: &[u32], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows: Vec<SweepRow> = mf_values
        .iter()
        .map(|&mf| SweepRow {
            mf,
            reduction: f64::NAN,
            tau: f64::NAN,
            runs: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.evaluator = crate::config::EvaluatorSpec::Synthetic { seed: None };
        let baseline_epochs = run_baseline(&cfg, &mut cfg.build_engine()?)?.total_epochs;
        for row in &mut rows {
            cfg.mf = row.mf;
            let result = run_search(&cfg, &mut cfg.build_engine()?)?;
            let fin = result
                .finalization
                .ok_or_else(|| Error::Config("search ended without finalization".into()))?;
            let before = Ranking::from_scores(&fin.ids, &fin.f1_before)?;
            let after = Ranking::from_scores(&fin.ids, &fin.f1_after)?;
            row.runs.push(SweepSeed {
                seed,
                epochs: result.total_epochs,
                baseline_epochs,
                reduction: 1.0 - result.total_epochs as f64 / baseline_epochs as f64,
                tau: kendall_tau(&before, &after)?,
            });
        }
    }
    for row in &mut rows {
        row.reduction = median(&row.runs.iter().map(|r| r.reduction).collect::<Vec<_>>());
        row.tau = median(&row.runs.iter().map(|r| r.tau).collect::<Vec<_>>());
    }
    Ok(rows)
}

/// Writes `front.csv` (`genome_id,f1,f2,nc,rc`, sorted by f1 then id) for the
/// whole population and `dot/<id>.dot` for each distinct non-dominated
/// genome. Returns the written paths, CSV first.
pub fn export_front(pop: &[Genome], dir: &Path) -> Result<Vec<PathBuf>> {
    let points = objectives(pop)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| points[a].f1.total_cmp(&points[b].f1).then(pop[a].id().cmp(&pop[b].id())));
    let mut csv = Vec::new();
    writeln!(csv, "genome_id,f1,f2,nc,rc").expect("write to Vec");
    for &i in &order {
        let g = &pop[i];
        writeln!(
            csv,
            "{},{},{},\"{}\",\"{}\"",
            g.id(),
            points[i].f1,
            points[i].f2,
            format_flat(&g.normal().flatten()),
            format_flat(&g.reduction().flatten())
        )
        .expect("write to Vec");
    }
    let csv_path = dir.join("front.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let mut written = vec![csv_path];

    let fronts = fast_non_dominated_sort(&points);
    let dot_dir = dir.join("dot");
    let mut done = HashSet::new();
    for &i in &order {
        if fronts[i] != 1 || !done.insert(pop[i].id()) {
            continue;
        }
        if done.len() == 1 {
            fs::create_dir_all(&dot_dir).map_err(|e| Error::io(&dot_dir, e))?;
        }
        let path = dot_dir.join(format!("{}.dot", pop[i].id()));
        fs::write(&path, to_dot(&pop[i])?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u64]) -> Vec<GenomeId> {
        v.iter().map(|&x| GenomeId(x)).collect()
    }

    fn tau_pairs(a: &[GenomeId], b: &[GenomeId]) -> f64 {
        let pos = |r: &[GenomeId], id| r.iter().position(|x| *x == id).unwrap() as i64;
        let n = a.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                let (x, y) = (a[i], a[j]);
                s += ((pos(a, x) - pos(a, y)) * (pos(b, x) - pos(b, y))).signum();
            }
        }
        s as f64 / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn tau_examples() {
        let r = Ranking::from_order(ids(&[1, 2, 3, 4])).unwrap();
        let s = Ranking::from_order(ids(&[1, 3, 2, 4])).unwrap();
        assert_eq!(kendall_tau(&r, &r).unwrap(), 1.0);
        assert_eq!(kendall_tau(&r, &r.reversed()).unwrap(), -1.0);
        assert!((kendall_tau(&r, &s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tau_rejects_mismatched_sets() {
        let r = Ranking::from_order(ids(&[1, 2, 3])).unwrap();
        let s = Ranking::from_order(ids(&[1, 2, 4])).unwrap();
        let t = Ranking::from_order(ids(&[1, 2])).unwrap();
        assert!(matches!(kendall_tau(&r, &s), Err(Error::RankingMismatch)));
        assert!(matches!(kendall_tau(&r, &t), Err(Error::RankingMismatch)));
        assert!(Ranking::from_order(ids(&[1, 1])).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let r = Ranking::from_scores(&ids(&[9, 3, 5]), &[0.2, 0.2, 0.1]).unwrap();
        assert_eq!(r.ids(), &ids(&[5, 3, 9])[..]);
    }

    proptest! {
        #[test]
        fn tau_matches_pair_enumeration(perm in (2usize..30).prop_flat_map(|n| {
            (Just((0..n as u64).collect::<Vec<_>>()).prop_shuffle(), Just((0..n as u64).collect::<Vec<_>>()).prop_shuffle())
        })) {
            let (a, b) = perm;
            let (a, b) = (ids(&a), ids(&b));
            let ra = Ranking::from_order(a.clone()).unwrap();
            let rb = Ranking::from_order(b.clone()).unwrap();
            let t = kendall_tau(&ra, &rb).unwrap();
            prop_assert!((t - tau_pairs(&a, &b)).abs() < 1e-12);
            prop_assert!((t - kendall_tau(&rb, &ra).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): hand-computed 0.9486832980505138
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        assert!((r - 0.948_683_298_050_513_8).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn ranking_study_shape() {
        let taus = ranking_study(40, 10, 3).unwrap();
        assert_eq!(taus.len(), 10);
        assert_eq!(taus[9], 1.0);
        assert_eq!(taus, ranking_study(40, 10, 3).unwrap());
    }

    fn evaluated(n: usize) -> Vec<Genome> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut pop = initialize_population(n, (3, 5), 20, &mut rng).unwrap();
        // f1 falls while f2 rises, so every genome is non-dominated
        for (i, g) in pop.iter_mut().enumerate() {
            g.eval = Some(crate::evaluation::EvalResult {
                f1: 0.5 - 0.05 * i as f64,
                f2: 1000 + 10 * i as u64,
                epochs_trained: 1,
                checkpoint_id: String::new(),
            });
        }
        pop
    }

    #[test]
    fn export_writes_rows_and_dots() {
        let dir = tempfile::tempdir().unwrap();
        let pop = evaluated(5);
        let written = export_front(&pop, dir.path()).unwrap();
        assert_eq!(written.len(), 6);
        let csv = fs::read_to_string(dir.path().join("front.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        let f1s: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(f1s.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(fs::read_dir(dir.path().join("dot")).unwrap().count(), 5);
    }

    #[test]
    fn export_empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        export_front(&[], dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("front.csv")).unwrap(), "genome_id,f1,f2,nc,rc\n");
    }

    #[test]
    fn export_requires_evaluations() {
        let dir = tempfile::tempdir().unwrap();
        let mut pop = evaluated(2);
        pop[1].eval = None;
        assert!(matches!(export_front(&pop, dir.path()), Err(Error::Unevaluated(_))));
    }
}
