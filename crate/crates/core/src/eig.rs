//! Expected-information-gain evaluation over the full particle x control grid
//! and selection of the next controls.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LikelihoodModel;
use crate::rng::rng_from_seed;
use crate::smc::ParticleCloud;

/// Particles per work item of the grid kernel. Partial sums are combined in
/// chunk order, so results do not depend on the thread count.
pub const PARTICLE_CHUNK: usize = 256;

/// Finite, strictly increasing set of candidate controls `tau` (us).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    taus: Vec<f64>,
    step: Option<f64>,
}

impl ControlGrid {
    /// `start, start + step, ...` up to and including `stop` (within rounding).
    pub fn uniform(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && start.is_finite() && stop >= start) {
            return Err(Error::config(format!("invalid grid {start}..{stop} step {step}")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        let taus = (0..n).map(|j| start + j as f64 * step).collect();
        Ok(ControlGrid { taus, step: Some(step) })
    }

    /// Arbitrary strictly increasing controls. Equally spaced input is
    /// recognized as uniform.
    pub fn from_taus(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::config("control grid is empty"));
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) || taus.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("control grid must be strictly increasing"));
        }
        let n = taus.len();
        let step = if n > 1 {
            let h = (taus[n - 1] - taus[0]) / (n - 1) as f64;
            let uniform =
                taus.iter().enumerate().all(|(j, t)| (t - (taus[0] + j as f64 * h)).abs() <= 1e-12 * t.abs().max(1.0));
            uniform.then_some(h)
        } else {
            None
        };
        Ok(ControlGrid { taus, step })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Index of the grid point equal to `tau` up to rounding.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        let tol = 1e-9 * self.step.unwrap_or(1.0).max(1e-3);
        let i = self.taus.partition_point(|&t| t < tau - tol);
        (i < self.taus.len() && (self.taus[i] - tau).abs() <= tol).then_some(i)
    }
}

/// Utility scored for each control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Utility {
    /// `-(1 - P) sum_k w_k log(1 - p_k) - P sum_k w_k log p_k`, with `p_k` the
    /// particle probabilities of outcome 0 and `P` their weighted mean. Bounded
    /// below by the binary entropy of `P`.
    CrossEntropy,
    /// Mutual information between outcome and parameters: `H(P) - sum_k w_k H(p_k)`.
    #[default]
    MutualInformation,
}

/// Utility of every control in a grid, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EigTable {
    pub values: Vec<f64>,
    pub argmax_index: usize,
    /// Number of outcomes folded into the cloud the table was computed from.
    pub generated_from_shot: Option<usize>,
}

impl EigTable {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("empty utility table"));
        }
        let mut best = 0;
        for (j, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = j;
            }
        }
        Ok(EigTable { values, argmax_index: best, generated_from_shot: None })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    p: f64,
    log_p: f64,
    log_q: f64,
    neg_entropy: f64,
}

impl Acc {
    fn add(&mut self, o: &Acc) {
        self.p += o.p;
        self.log_p += o.log_p;
        self.log_q += o.log_q;
        self.neg_entropy += o.neg_entropy;
    }
}

fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Full-grid utility evaluator bound to one model and grid.
pub struct EigEngine<'a, M: LikelihoodModel> {
    model: &'a M,
    grid: &'a ControlGrid,
    cache: M::GridCache,
}

impl<'a, M: LikelihoodModel> EigEngine<'a, M> {
    pub fn new(model: &'a M, grid: &'a ControlGrid) -> Self {
        EigEngine { model, grid, cache: model.grid_cache(grid) }
    }

    pub fn grid(&self) -> &ControlGrid {
        self.grid
    }

    /// Likelihood evaluations per table.
    pub fn evaluations(&self, cloud: &ParticleCloud) -> usize {
        cloud.len() * self.grid.len()
    }

    fn accumulate(&self, cloud: &ParticleCloud) -> Vec<Acc> {
        let n_tau = self.grid.len();
        let d = cloud.dim();
        let partials: Vec<Vec<Acc>> = cloud
            .locations()
            .par_chunks(PARTICLE_CHUNK * d)
            .zip(cloud.weights().par_chunks(PARTICLE_CHUNK))
            .map(|(locs, ws)| {
                let mut acc = vec![Acc::default(); n_tau];
                let mut row = vec![0.0; n_tau];
                for (x, &w) in locs.chunks_exact(d).zip(ws) {
                    if w == 0.0 {
                        continue;
                    }
                    self.model.prob_zero_row(&self.cache, x, &mut row);
                    for (a, &p) in acc.iter_mut().zip(&row) {
                        let q = 1.0 - p;
                        let lp = p.ln();
                        let lq = q.ln();
                        a.p += w * p;
                        a.log_p += w * lp;
                        a.log_q += w * lq;
                        a.neg_entropy += w * (p * lp + q * lq);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Acc::default(); n_tau];
        for part in &partials {
            for (t, a) in total.iter_mut().zip(part) {
                t.add(a);
            }
        }
        total
    }

    pub fn table(&self, cloud: &ParticleCloud, utility: Utility) -> EigTable {
        let values = self
            .accumulate(cloud)
            .into_iter()
            .map(|a| match utility {
                Utility::CrossEntropy => -(1.0 - a.p) * a.log_q - a.p * a.log_p,
                Utility::MutualInformation => (binary_entropy(a.p) + a.neg_entropy).max(0.0),
            })
            .collect();
        EigTable::from_values(values).expect("grid is non-empty")
    }
}

/// Utility of every control in `grid` for the posterior `cloud`.
pub fn eig_table<M: LikelihoodModel>(
    cloud: &ParticleCloud,
    model: &M,
    grid: &ControlGrid,
    utility: Utility,
) -> EigTable {
    EigEngine::new(model, grid).table(cloud, utility)
}

/// Predicted probability of reading out 1: `sum_k w_k Pr(1 | x_k, tau)`.
pub fn predicted_probability<M: LikelihoodModel>(cloud: &ParticleCloud, model: &M, tau: f64) -> f64 {
    let mut p0 = vec![0.0; cloud.len()];
    model.prob_zero_batch(cloud.locations(), tau, &mut p0);
    cloud.weights().iter().zip(&p0).map(|(w, p)| w * (1.0 - p)).sum()
}

/// Control at the utility maximum; ties go to the smallest `tau`.
pub fn select_optimal(table: &EigTable, grid: &ControlGrid) -> f64 {
    grid.taus()[table.argmax_index]
}

/// How utilities are turned into batch sampling weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchWeighting {
    /// `(E - min E)^p`.
    #[default]
    FloorSubtracted,
    /// `E^p`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPolicy {
    pub n_batch: usize,
    pub p_exponent: f64,
    #[serde(default)]
    pub weighting: BatchWeighting,
}

impl BatchPolicy {
    pub fn new(n_batch: usize) -> Self {
        BatchPolicy { n_batch, p_exponent: 6.0, weighting: BatchWeighting::FloorSubtracted }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.p_exponent >= 0.0) {
            return Err(Error::config("batch sharpening exponent must be non-negative"));
        }
        Ok(())
    }

    /// Sampling weight of each control (unnormalized). `None` means "uniform".
    pub fn weights(&self, table: &EigTable) -> Option<Vec<f64>> {
        let floor = match self.weighting {
            BatchWeighting::FloorSubtracted => table.values.iter().copied().fold(f64::INFINITY, f64::min),
            BatchWeighting::Raw => 0.0,
        };
        let base: Vec<f64> = table.values.iter().map(|v| (v - floor).max(0.0)).collect();
        let top = base.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0 && top.is_finite()) {
            return None;
        }
        Some(base.iter().map(|&b| if b > 0.0 { (b / top).powf(self.p_exponent) } else { 0.0 }).collect())
    }
}

/// Draws `policy.n_batch` controls i.i.d. with probability proportional to
/// the sharpened utility.
pub fn sample_batch(table: &EigTable, grid: &ControlGrid, policy: &BatchPolicy, seed: u64) -> Result<Vec<f64>> {
    policy.validate()?;
    if table.values.len() != grid.len() {
        return Err(Error::contract("utility table does not match grid"));
    }
    if table.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("utility table has non-finite values"));
    }
    let mut rng = rng_from_seed(seed);
    let weights = policy.weights(table).unwrap_or_else(|| vec![1.0; grid.len()]);
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::contract(format!("batch weights: {e}")))?;
    Ok((0..policy.n_batch).map(|_| grid.taus()[dist.sample(&mut rng)]).collect())
}
