//! Statistics over activation traces: per-basis temporal autocorrelation,
//! correlation of energies between lattice neighbours, spatial clustering of
//! the most active units, and a two-sample permutation test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activation::{shuffle_frames, ActivationTrace};
use crate::error::{Error, Result};
use crate::topography::Topography;

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Which per-frame quantity the autocorrelation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quantity {
    #[default]
    Activation,
    Energy,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quantity::Activation => "activation",
            Quantity::Energy => "energy",
        })
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(Quantity::Activation),
            "energy" => Ok(Quantity::Energy),
            other => Err(Error::InvalidConfig(format!("unknown quantity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrOptions {
    pub max_lag: usize,
    pub quantity: Quantity,
    /// Seed of the frame shuffle behind the baseline.
    pub shuffle_seed: u64,
}

impl AutocorrOptions {
    pub fn new(max_lag: usize) -> Self {
        AutocorrOptions {
            max_lag,
            quantity: Quantity::Activation,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrReport {
    /// `0..=max_lag`, in frames.
    pub lags: Vec<usize>,
    pub mean_autocorr: Vec<f64>,
    /// Units with non-zero variance, one row of `per_basis` each.
    pub included_units: Vec<usize>,
    pub per_basis: Vec<Vec<f64>>,
    pub shuffled_mean: Vec<f64>,
    /// Zero-variance units left out of the means.
    pub excluded: usize,
    pub frame_rate: f64,
}

impl AutocorrReport {
    pub fn lag_seconds(&self, lag: usize) -> f64 {
        lag as f64 / self.frame_rate
    }
}

fn columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

/// Pearson correlation of `series[..T-lag]` with `series[lag..]` for each lag.
/// A lag whose segments are flat counts as 0.
fn lagged_correlations(series: &[f64], max_lag: usize) -> Vec<f64> {
    let t = series.len();
    (0..=max_lag)
        .map(|lag| {
            if lag == 0 {
                1.0
            } else {
                pearson(&series[..t - lag], &series[lag..]).unwrap_or(0.0)
            }
        })
        .collect()
}

fn mean_over_units(rows: &[Vec<f64>], n_lags: usize) -> Vec<f64> {
    (0..n_lags)
        .map(|l| rows.iter().map(|r| r[l]).sum::<f64>() / rows.len() as f64)
        .collect()
}

pub fn autocorrelation(trace: &ActivationTrace, max_lag: usize) -> Result<AutocorrReport> {
    autocorrelation_with(trace, &AutocorrOptions::new(max_lag))
}

/// Per-basis lagged autocorrelation, averaged over bases, alongside the same
/// statistic on a frame-shuffled copy of the trace.
pub fn autocorrelation_with(
    trace: &ActivationTrace,
    options: &AutocorrOptions,
) -> Result<AutocorrReport> {
    let t = trace.n_frames();
    let max_lag = options.max_lag;
    if max_lag == 0 || max_lag >= t {
        return Err(Error::InvalidConfig(format!(
            "max_lag must satisfy 1 <= max_lag < n_frames ({t}), got {max_lag}"
        )));
    }
    let pick = |tr: &ActivationTrace| match options.quantity {
        Quantity::Activation => columns(tr.activations()),
        Quantity::Energy => columns(tr.energies()),
    };
    let series = pick(trace);
    let shuffled_series = pick(&shuffle_frames(trace, options.shuffle_seed));
    let included_units: Vec<usize> = (0..series.len())
        .filter(|&u| variance(&series[u]) > 0.0)
        .collect();
    if included_units.is_empty() {
        return Err(Error::DegenerateSeries(
            "every basis has a constant series".into(),
        ));
    }
    let per_basis: Vec<Vec<f64>> = included_units
        .par_iter()
        .map(|&u| lagged_correlations(&series[u], max_lag))
        .collect();
    let shuffled: Vec<Vec<f64>> = included_units
        .par_iter()
        .map(|&u| lagged_correlations(&shuffled_series[u], max_lag))
        .collect();
    let n_lags = max_lag + 1;
    Ok(AutocorrReport {
        lags: (0..n_lags).collect(),
        mean_autocorr: mean_over_units(&per_basis, n_lags),
        shuffled_mean: mean_over_units(&shuffled, n_lags),
        excluded: series.len() - included_units.len(),
        included_units,
        per_basis,
        frame_rate: trace.frame_rate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCorrelation {
    pub unit_i: usize,
    pub unit_j: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub other_mean_r: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyReport {
    pub pair_correlations: Vec<PairCorrelation>,
    pub mean_r: f64,
    /// Adjacent pairs skipped because one of the series was flat.
    pub excluded_pairs: usize,
    pub comparison: Option<Comparison>,
}

impl AdjacencyReport {
    pub fn rs(&self) -> Vec<f64> {
        self.pair_correlations.iter().map(|p| p.r).collect()
    }

    /// Permutation test of this report's pair correlations against `other`'s.
    pub fn compare(
        mut self,
        other: &AdjacencyReport,
        n_permutations: usize,
        seed: u64,
    ) -> Result<Self> {
        let p_value = permutation_test(&self.rs(), &other.rs(), n_permutations, seed)?;
        self.comparison = Some(Comparison {
            other_mean_r: other.mean_r,
            p_value,
            n_permutations,
        });
        Ok(self)
    }
}

/// Pearson correlation of energies for every unordered pair of units at
/// torus distance exactly 1.
pub fn adjacent_correlation(trace: &ActivationTrace, topo: &Topography) -> Result<AdjacencyReport> {
    if trace.n_units() != topo.n_units() {
        return Err(Error::DimensionMismatch {
            what: "trace units vs lattice units",
            expected: topo.n_units(),
            got: trace.n_units(),
        });
    }
    if trace.n_frames() < 3 {
        return Err(Error::InvalidConfig(format!(
            "adjacency needs at least 3 frames, got {}",
            trace.n_frames()
        )));
    }
    let energies = columns(trace.energies());
    let pairs = topo.adjacent_pairs();
    let rs: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pearson(&energies[i], &energies[j]))
        .collect();
    let pair_correlations: Vec<PairCorrelation> = pairs
        .iter()
        .zip(&rs)
        .filter_map(|(&(unit_i, unit_j), r)| r.map(|r| PairCorrelation { unit_i, unit_j, r }))
        .collect();
    if pair_correlations.is_empty() {
        return Err(Error::DegenerateSeries(
            "no adjacent pair has two non-constant energy series".into(),
        ));
    }
    let mean_r =
        pair_correlations.iter().map(|p| p.r).sum::<f64>() / pair_correlations.len() as f64;
    Ok(AdjacencyReport {
        excluded_pairs: pairs.len() - pair_correlations.len(),
        pair_correlations,
        mean_r,
        comparison: None,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-sided permutation test for a difference in means:
/// `p = (1 + #{|Δ*| ≥ |Δ|}) / (1 + n_permutations)` over seeded random
/// relabelings of the pooled values.
pub fn permutation_test(
    group_a: &[f64],
    group_b: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if n_permutations == 0 {
        return Err(Error::InvalidConfig("n_permutations must be >= 1".into()));
    }
    let observed = (mean(group_a) - mean(group_b)).abs();
    // permuted sums of the same values can differ from the observed one by
    // rounding alone; treat those as ties
    let tolerance = 1e-12 * (1.0 + observed);
    let mut pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let na = group_a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_permutations {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(na);
        if (mean(a) - mean(b)).abs() >= observed - tolerance {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (1 + n_permutations) as f64)
}

/// Mean over frames of the average pairwise torus distance among the `k`
/// highest-energy units of each frame. Lower means more clustered.
pub fn cluster_locality(trace: &ActivationTrace, topo: &Topography, k: usize) -> Result<f64> {
    let n = topo.n_units();
    if trace.n_units() != n {
        return Err(Error::DimensionMismatch {
            what: "trace units vs lattice units",
            expected: n,
            got: trace.n_units(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::BadK { k, max: n });
    }
    if trace.n_frames() == 0 {
        return Err(Error::InvalidConfig("trace has no frames".into()));
    }
    if k == 1 {
        return Ok(0.0);
    }
    let energies = trace.energies();
    let per_frame: Vec<f64> = (0..trace.n_frames())
        .into_par_iter()
        .map(|t| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| energies[(t, b)].total_cmp(&energies[(t, a)]));
            let top = &order[..k];
            let mut total = 0usize;
            for (x, &i) in top.iter().enumerate() {
                for &j in &top[x + 1..] {
                    total += topo.distance_unchecked(i, j);
                }
            }
            total as f64 / (k * (k - 1) / 2) as f64
        })
        .collect();
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}
