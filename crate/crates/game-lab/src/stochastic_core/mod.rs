//! Time grids, reproducible Brownian bundles, Itô sums, stochastic
//! exponentials and likelihood-ratio weights.
//!
//! Conventions used throughout the crate:
//!
//! * paths are stored as `(n_paths, n_steps + 1, dim)` arrays of node values
//!   ([`RealPath`]) and `(n_paths, n_steps, dim)` arrays of increments
//!   ([`Increments`]);
//! * every stochastic integral is a left-endpoint Itô sum, so integrands are
//!   evaluated at the node that *starts* each step;
//! * exponentials are accumulated in log space and exponentiated per node.

mod rng;

pub use rng::{counter_normal, counter_uniform};

use crate::error::{LabError, Result};
use crate::stats;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Uniform partition of `[0, T]` into `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(LabError::invalid(format!(
                "time grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps < 2 {
            return Err(LabError::invalid(format!(
                "time grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of node `k` (node 0 is 0, node `n_steps` is the horizon up to one
    /// rounding).
    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Node values of a vector-valued process: `(n_paths, n_nodes, dim)`.
#[derive(Debug, Clone)]
pub struct RealPath {
    values: Array3<f64>,
}

impl RealPath {
    pub fn from_array(values: Array3<f64>, grid: &TimeGrid) -> Result<RealPath> {
        if values.shape()[1] != grid.n_nodes() {
            return Err(LabError::shape(format!(
                "path has {} nodes, grid expects {}",
                values.shape()[1],
                grid.n_nodes()
            )));
        }
        Ok(RealPath { values })
    }

    pub fn zeros(n_paths: usize, grid: &TimeGrid, dim: usize) -> RealPath {
        RealPath {
            values: Array3::zeros((n_paths, grid.n_nodes(), dim)),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn at(&self, path: usize, node: usize, component: usize) -> f64 {
        self.values[[path, node, component]]
    }

    /// Scalar view helper for dim-1 paths.
    pub fn scalar(&self, path: usize, node: usize) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        self.values[[path, node, 0]]
    }
}

/// Per-step increments of a vector-valued process: `(n_paths, n_steps, dim)`.
#[derive(Debug, Clone)]
pub struct Increments {
    values: Array3<f64>,
}

impl Increments {
    pub fn from_array(values: Array3<f64>, grid: &TimeGrid) -> Result<Increments> {
        if values.shape()[1] != grid.n_steps() {
            return Err(LabError::shape(format!(
                "increments have {} steps, grid expects {}",
                values.shape()[1],
                grid.n_steps()
            )));
        }
        Ok(Increments { values })
    }

    pub fn zeros(n_paths: usize, grid: &TimeGrid, dim: usize) -> Increments {
        Increments {
            values: Array3::zeros((n_paths, grid.n_steps(), dim)),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn at(&self, path: usize, step: usize, component: usize) -> f64 {
        self.values[[path, step, component]]
    }
}

/// Stream identifiers reserved inside a bundle seed. Distinct streams make
/// the noise blocks mutually independent and lettable per block.
pub const STREAM_STOCK: [u64; 3] = [1, 2, 3];
pub const STREAM_DRIFT: [u64; 2] = [4, 5];
pub const STREAM_PRIOR: [u64; 2] = [6, 7];

/// Per-stream seeds. Ordinarily all streams share one seed; the adaptedness
/// audit reseeds the streams foreign to one player while keeping that
/// player's streams fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleSeeds {
    pub stock: [u64; 3],
    pub drift: [u64; 2],
    pub prior: [u64; 2],
}

impl BundleSeeds {
    pub fn uniform(seed: u64) -> BundleSeeds {
        BundleSeeds {
            stock: [seed; 3],
            drift: [seed; 2],
            prior: [seed; 2],
        }
    }

    /// Reseed every stream that does *not* belong to observation block
    /// `kept_block` (1 or 2). Used to audit that a strategy only reads its
    /// own block.
    pub fn reseed_foreign(seed: u64, kept_block: usize) -> BundleSeeds {
        let other = seed ^ 0xa5a5_5a5a_c3c3_3c3c;
        let mut seeds = BundleSeeds {
            stock: [other; 3],
            drift: [other; 2],
            prior: [other; 2],
        };
        seeds.stock[kept_block] = seed;
        seeds.drift[kept_block - 1] = seed;
        seeds.prior[kept_block - 1] = seed;
        seeds
    }
}

/// Independent Brownian increments for the three stock-noise blocks and the
/// two drift-noise blocks, generated from counter-based streams.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    seeds: BundleSeeds,
    n_paths: usize,
    dims: [usize; 3],
    stock: [Increments; 3],
    drift: [Increments; 2],
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn seeds(&self) -> &BundleSeeds {
        &self.seeds
    }

    /// Stock-noise increments `dW^k` for block `k` in `{0, 1, 2}`.
    pub fn stock_noise(&self, block: usize) -> &Increments {
        &self.stock[block]
    }

    /// Drift-noise increments for observed block `k` in `{1, 2}`.
    pub fn drift_noise(&self, block: usize) -> &Increments {
        &self.drift[block - 1]
    }
}

fn fill_increments(
    grid: &TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
    stream: u64,
) -> Increments {
    let mut out = Increments::zeros(n_paths, grid, dim);
    let sqrt_dt = grid.dt().sqrt();
    let n_steps = grid.n_steps();
    out.values_mut()
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            for j in 0..n_steps {
                for c in 0..dim {
                    row[[j, c]] =
                        sqrt_dt * counter_normal(seed, stream, p as u64, j as u64, c as u64);
                }
            }
        });
    out
}

/// Draw the full increment bundle for `n_paths` paths.
///
/// Regenerating with the same grid, dims and seed reproduces identical bits,
/// regardless of thread count.
pub fn sample_brownian_bundle(
    grid: &TimeGrid,
    dims: (usize, usize, usize),
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    sample_bundle_with_seeds(grid, dims, n_paths, BundleSeeds::uniform(seed))
}

/// Same as [`sample_brownian_bundle`] but with per-stream seeds; used by the
/// adaptedness audit to resample only the noise foreign to one player.
pub fn sample_bundle_with_seeds(
    grid: &TimeGrid,
    dims: (usize, usize, usize),
    n_paths: usize,
    seeds: BundleSeeds,
) -> Result<PathBundle> {
    let (n0, n1, n2) = dims;
    if n0 + n1 + n2 == 0 {
        return Err(LabError::invalid(
            "at least one noise block must have positive dimension",
        ));
    }
    if n_paths == 0 {
        return Err(LabError::invalid("n_paths must be positive"));
    }
    let stock = [
        fill_increments(grid, n_paths, n0, seeds.stock[0], STREAM_STOCK[0]),
        fill_increments(grid, n_paths, n1, seeds.stock[1], STREAM_STOCK[1]),
        fill_increments(grid, n_paths, n2, seeds.stock[2], STREAM_STOCK[2]),
    ];
    let drift = [
        fill_increments(grid, n_paths, n1, seeds.drift[0], STREAM_DRIFT[0]),
        fill_increments(grid, n_paths, n2, seeds.drift[1], STREAM_DRIFT[1]),
    ];
    Ok(PathBundle {
        grid: *grid,
        seeds,
        n_paths,
        dims: [n0, n1, n2],
        stock,
        drift,
    })
}

/// Standard-normal draws used for prior sampling of initial drift values:
/// one row per path, one column per component.
pub fn sample_prior_normals(seed: u64, stream: u64, n_paths: usize, dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_paths, dim));
    for p in 0..n_paths {
        for c in 0..dim {
            out[[p, c]] = counter_normal(seed, stream, p as u64, 0, c as u64);
        }
    }
    out
}

fn check_integrand_shapes(integrand: &RealPath, increments: &Increments, what: &str) -> Result<()> {
    if integrand.n_paths() != increments.n_paths()
        || integrand.dim() != increments.dim()
        || integrand.n_nodes() != increments.n_steps() + 1
    {
        return Err(LabError::shape(format!(
            "{what}: integrand ({} paths x {} nodes x {}) does not conform to increments ({} paths x {} steps x {})",
            integrand.n_paths(),
            integrand.n_nodes(),
            integrand.dim(),
            increments.n_paths(),
            increments.n_steps(),
            increments.dim(),
        )));
    }
    Ok(())
}

/// Left-endpoint Itô sum, componentwise: node `k` holds
/// `sum_{j<k} f(t_j) * dW_j` for each component. With `integrand == 1` the
/// output reproduces the driving process itself, bit for bit.
pub fn ito_integral(integrand: &RealPath, increments: &Increments) -> Result<RealPath> {
    check_integrand_shapes(integrand, increments, "ito_integral")?;
    let n_paths = integrand.n_paths();
    let n_steps = increments.n_steps();
    let dim = integrand.dim();
    let mut out = Array3::zeros((n_paths, n_steps + 1, dim));
    let f = integrand.view();
    let dw = increments.view();
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            for c in 0..dim {
                let mut acc = 0.0;
                for j in 0..n_steps {
                    acc += f[[p, j, c]] * dw[[p, j, c]];
                    row[[j + 1, c]] = acc;
                }
            }
        });
    Ok(RealPath { values: out })
}

/// Sign of the stochastic integral inside a stochastic exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentSign {
    Plus,
    Minus,
}

impl ExponentSign {
    fn factor(self) -> f64 {
        match self {
            ExponentSign::Plus => 1.0,
            ExponentSign::Minus => -1.0,
        }
    }
}

/// Stochastic exponential along each path:
/// `exp( sign * sum_j b_j . dW_j  -  1/2 * sum_j |b_j|^2 dt )`,
/// accumulated in log space with left-endpoint sums. Node 0 is exactly 1 and
/// every node is strictly positive.
pub fn stochastic_exponential(
    integrand: &RealPath,
    increments: &Increments,
    sign: ExponentSign,
    grid: &TimeGrid,
) -> Result<RealPath> {
    check_integrand_shapes(integrand, increments, "stochastic_exponential")?;
    if increments.n_steps() != grid.n_steps() {
        return Err(LabError::shape(format!(
            "stochastic_exponential: increments have {} steps, grid has {}",
            increments.n_steps(),
            grid.n_steps()
        )));
    }
    let n_paths = integrand.n_paths();
    let n_steps = grid.n_steps();
    let dim = integrand.dim();
    let dt = grid.dt();
    let s = sign.factor();
    let mut out = Array3::zeros((n_paths, n_steps + 1, 1));
    let b = integrand.view();
    let dw = increments.view();
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            row[[0, 0]] = 1.0;
            let mut log_acc = 0.0;
            for j in 0..n_steps {
                let mut dot = 0.0;
                let mut quad = 0.0;
                for c in 0..dim {
                    let bv = b[[p, j, c]];
                    dot += bv * dw[[p, j, c]];
                    quad += bv * bv;
                }
                log_acc += s * dot - 0.5 * quad * dt;
                row[[j + 1, 0]] = log_acc.exp();
            }
        });
    Ok(RealPath { values: out })
}

/// Likelihood-ratio weight process
/// `Z(t) = exp( sum_j h_j . dY_j - 1/2 |h_j|^2 dt )` driven by the
/// observation increments. `Z(0) = 1` and the path is strictly positive;
/// when the observations are a pure Brownian motion, `Z` is a unit-mean
/// martingale.
pub fn girsanov_weight(
    integrand: &RealPath,
    observation_increments: &Increments,
    grid: &TimeGrid,
) -> Result<RealPath> {
    stochastic_exponential(integrand, observation_increments, ExponentSign::Plus, grid)
}

/// Mean over paths of a scalar path at one node (convenience for tests and
/// diagnostics).
pub fn node_mean(path: &RealPath, node: usize) -> f64 {
    let vals: Vec<f64> = (0..path.n_paths()).map(|p| path.at(p, node, 0)).collect();
    stats::mean(&vals)
}

/// Paths of ones, matching an increments array — handy as an
/// identity integrand.
pub fn ones_path(n_paths: usize, grid: &TimeGrid, dim: usize) -> RealPath {
    RealPath {
        values: Array3::ones((n_paths, grid.n_nodes(), dim)),
    }
}

/// Build a `RealPath` holding the same deterministic node values on every
/// path (used for deterministic coefficient paths).
pub fn broadcast_path(node_values: ArrayView2<'_, f64>, n_paths: usize) -> RealPath {
    let (n_nodes, dim) = (node_values.shape()[0], node_values.shape()[1]);
    let mut values = Array3::zeros((n_paths, n_nodes, dim));
    for p in 0..n_paths {
        for k in 0..n_nodes {
            for c in 0..dim {
                values[[p, k, c]] = node_values[[k, c]];
            }
        }
    }
    RealPath { values }
}
