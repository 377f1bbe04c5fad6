//! Ornstein-Uhlenbeck drift blocks, observation synthesis, and the
//! Kalman-Bucy filter.
//!
//! A *block* couples an unobservable mean-reverting drift with the group of
//! stocks it steers. The drift follows
//! `d mu = theta (delta - mu) dt + zeta dBbar`, and the normalized
//! observation process extracted from the block's stock prices satisfies
//! `dY = eta dt + dW` with `eta = Sigma^{-1} (mu - A/2)`, where `A_i` is the
//! i-th row sum of squared volatilities of `Sigma`. The pair `(mu, Y)` is
//! jointly Gaussian, so the conditional law of the drift given the
//! observation history stays Gaussian: its mean solves
//! `d muhat = theta (delta - muhat) dt + P(t) Sigma^{-T} dWhat`, driven by
//! the innovation `dWhat = dY - etahat dt`, and its covariance `P(t)` solves
//! the matrix Riccati equation
//! `dP/dt = -(theta P + P theta^T) - P Sigma^{-T} Sigma^{-1} P
//! + zeta zeta^T`, a deterministic ODE independent of the observed data.
//!
//! The injection game downstream needs one more derived object: with the
//! filtered price of risk `bhat = Sigma^{-1} (muhat - r 1)`, the filtered
//! adjoint of player `i` has the closed form
//! `phat(t) = -M_i exp{ int_0^t (-r - |bhat|^2 / 2) ds
//! - int_0^t bhat . dWhat }`, which is strictly negative and, once
//! compounded by `e^{int r}`, has constant expectation `-M_i`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{LabError, Result};
use crate::stochastic_core::{
    sample_prior_normals, stochastic_exponential, ExponentSign, Increments, RealPath, TimeGrid,
};

/// Deterministic short rate. Only constant rates are used by the bundled
/// scenarios, but every consumer goes through [`ShortRate::value`] and
/// [`ShortRate::integral_nodes`] so a time-dependent variant stays cheap to
/// add.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShortRate {
    Constant(f64),
}

impl ShortRate {
    /// Rate at time `t`.
    pub fn value(&self, _t: f64) -> f64 {
        match self {
            ShortRate::Constant(r) => *r,
        }
    }

    /// `int_0^{t_k} r(s) ds` at every grid node, accumulated with
    /// left-endpoint sums so discount factors compose exactly with the Euler
    /// schemes used elsewhere.
    pub fn integral_nodes(&self, grid: &TimeGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.n_nodes());
        out.push(0.0);
        let mut acc = 0.0;
        for k in 0..grid.n_steps() {
            acc += self.value(grid.node(k)) * grid.dt();
            out.push(acc);
        }
        out
    }
}

fn mat_is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Multiply `mat * x` into `out` using plain loops; the block dimensions are
/// tiny, so this avoids round-trips between the array and matrix libraries in
/// the per-path hot loops.
fn matvec(mat: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = mat.shape();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, out.len());
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xv) in x.iter().enumerate() {
            acc += mat[(i, j)] * xv;
        }
        *slot = acc;
    }
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Parameters of one mean-reverting drift block:
/// `d mu = theta (delta - mu) dt + zeta dBbar`, with the prior law
/// `N(m0, P0)` for `mu(0)`.
///
/// The library accepts any finite square `theta` (the zero matrix is useful
/// in closed-form tests); scenario validation imposes the stricter positive
/// mean-reversion required by the game's standing assumptions.
#[derive(Debug, Clone)]
pub struct OuBlockParams {
    theta: DMatrix<f64>,
    delta: DVector<f64>,
    zeta: DMatrix<f64>,
    m0: DVector<f64>,
    p0: DMatrix<f64>,
}

impl OuBlockParams {
    pub fn new(
        theta: DMatrix<f64>,
        delta: DVector<f64>,
        zeta: DMatrix<f64>,
        m0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<OuBlockParams> {
        let n = delta.len();
        if n == 0 {
            return Err(LabError::invalid("drift block must have dimension >= 1"));
        }
        if theta.nrows() != n || theta.ncols() != n {
            return Err(LabError::shape(format!(
                "theta must be {n}x{n}, got {}x{}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        if zeta.nrows() != n {
            return Err(LabError::shape(format!(
                "zeta must have {n} rows, got {}",
                zeta.nrows()
            )));
        }
        if m0.len() != n {
            return Err(LabError::shape(format!(
                "prior mean must have length {n}, got {}",
                m0.len()
            )));
        }
        if p0.nrows() != n || p0.ncols() != n {
            return Err(LabError::shape(format!(
                "prior covariance must be {n}x{n}, got {}x{}",
                p0.nrows(),
                p0.ncols()
            )));
        }
        if !mat_is_finite(&theta)
            || !mat_is_finite(&zeta)
            || !mat_is_finite(&p0)
            || !delta.iter().all(|v| v.is_finite())
            || !m0.iter().all(|v| v.is_finite())
        {
            return Err(LabError::invalid(
                "drift block parameters must all be finite",
            ));
        }
        let scale = 1.0 + p0.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if (&p0 - p0.transpose())
            .iter()
            .any(|v| v.abs() > 1e-10 * scale)
        {
            return Err(LabError::invalid("prior covariance must be symmetric"));
        }
        let p0 = (&p0 + p0.transpose()) * 0.5;
        if min_symmetric_eigenvalue(&p0) < -1e-10 * scale {
            return Err(LabError::invalid(
                "prior covariance must be positive semidefinite",
            ));
        }
        Ok(OuBlockParams {
            theta,
            delta,
            zeta,
            m0,
            p0,
        })
    }

    /// Dimension of the drift vector.
    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// Number of columns of `zeta`, i.e. the dimension of the block's drift
    /// noise.
    pub fn noise_dim(&self) -> usize {
        self.zeta.ncols()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn zeta(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.p0
    }

    /// Symmetric square root of the prior covariance, used to turn standard
    /// normals into prior draws. Tiny negative eigenvalues from rounding are
    /// clamped to zero.
    pub fn prior_cov_sqrt(&self) -> DMatrix<f64> {
        let eig = self.p0.clone().symmetric_eigen();
        let roots: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
        let d = DMatrix::from_diagonal(&DVector::from_vec(roots));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }
}

/// Volatility matrix of one stock block together with the derived pieces the
/// observation algebra needs: the inverse, the instantaneous variances
/// `A_i = sum_j Sigma_ij^2`, and the short rate.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    inst_variance: DVector<f64>,
    rate: ShortRate,
}

impl ObservationModel {
    pub fn new(sigma: DMatrix<f64>, rate: ShortRate) -> Result<ObservationModel> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(LabError::shape(format!(
                "volatility matrix must be square and nonempty, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !mat_is_finite(&sigma) {
            return Err(LabError::invalid("volatility matrix must be finite"));
        }
        let sigma_inv = sigma
            .clone()
            .try_inverse()
            .filter(mat_is_finite)
            .ok_or_else(|| LabError::invalid("volatility matrix is singular"))?;
        let inst_variance = DVector::from_iterator(
            n,
            sigma.row_iter().map(|row| row.iter().map(|v| v * v).sum()),
        );
        Ok(ObservationModel {
            sigma,
            sigma_inv,
            inst_variance,
            rate,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Row sums of squared volatilities (`A` in the observation drift).
    pub fn inst_variance(&self) -> &DVector<f64> {
        &self.inst_variance
    }

    pub fn rate(&self) -> ShortRate {
        self.rate
    }
}

const RICCATI_PSD_TOL: f64 = 1e-8;

/// Error covariance `P(t)` of the drift filter at every grid node, by a
/// classical 4th-order one-step method on
/// `dP/dt = -(theta P + P theta^T) - P C P + zeta zeta^T`,
/// `C = Sigma^{-T} Sigma^{-1}`, with explicit re-symmetrization after each
/// step. The drift is the symmetrized form of `-2 theta P`; the two agree
/// whenever `theta` and `P` commute (in particular for diagonal `theta`),
/// and only the symmetrized form keeps `P` symmetric in general.
pub fn solve_riccati(
    params: &OuBlockParams,
    obs: &ObservationModel,
    grid: &TimeGrid,
) -> Result<Vec<DMatrix<f64>>> {
    if obs.dim() != params.dim() {
        return Err(LabError::shape(format!(
            "volatility block is {}-dimensional but drift block is {}-dimensional",
            obs.dim(),
            params.dim()
        )));
    }
    let c = obs.sigma_inv().transpose() * obs.sigma_inv();
    let q = params.zeta() * params.zeta().transpose();
    let theta = params.theta();
    let rhs = |p: &DMatrix<f64>| -> DMatrix<f64> {
        let tp = theta * p;
        &q - &tp - tp.transpose() - p * &c * p
    };
    let dt = grid.dt();
    let mut p = params.prior_cov().clone();
    let mut nodes = Vec::with_capacity(grid.n_nodes());
    nodes.push(p.clone());
    for step in 0..grid.n_steps() {
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &k1 * (dt / 2.0)));
        let k3 = rhs(&(&p + &k2 * (dt / 2.0)));
        let k4 = rhs(&(&p + &k3 * dt));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        p = (&p + p.transpose()) * 0.5;
        if !mat_is_finite(&p) {
            return Err(LabError::numerical(
                "riccati",
                format!(
                    "covariance diverged at node {} (t = {:.6})",
                    step + 1,
                    grid.node(step + 1)
                ),
            ));
        }
        let min_eig = min_symmetric_eigenvalue(&p);
        if min_eig < -RICCATI_PSD_TOL {
            return Err(LabError::numerical(
                "riccati",
                format!(
                    "covariance lost positive semidefiniteness at node {} (t = {:.6}, min eigenvalue {:.3e})",
                    step + 1,
                    grid.node(step + 1),
                    min_eig
                ),
            ));
        }
        nodes.push(p.clone());
    }
    Ok(nodes)
}

/// How to seed the true drift value at time zero relative to the filter's
/// prior `N(m0, P0)`.
///
/// `PriorMean` pins every path at `m0` (useful for deterministic fixtures
/// but makes the filter's stated prior wrong unless `P0 = 0`);
/// `PriorSample` draws each path from the prior itself, which is the
/// correctly specified regime every consistency diagnostic assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialLaw {
    PriorMean,
    PriorSample { seed: u64, stream: u64 },
}

/// Per-path initial drift values under the given law; one row per path.
pub fn initial_drift_values(
    params: &OuBlockParams,
    law: InitialLaw,
    n_paths: usize,
) -> Result<Array2<f64>> {
    if n_paths == 0 {
        return Err(LabError::invalid("n_paths must be positive"));
    }
    let n = params.dim();
    let mut out = Array2::zeros((n_paths, n));
    match law {
        InitialLaw::PriorMean => {
            for mut row in out.axis_iter_mut(Axis(0)) {
                for i in 0..n {
                    row[i] = params.prior_mean()[i];
                }
            }
        }
        InitialLaw::PriorSample { seed, stream } => {
            let normals = sample_prior_normals(seed, stream, n_paths, n);
            let root = params.prior_cov_sqrt();
            let mut scratch = vec![0.0; n];
            let mut kicked = vec![0.0; n];
            for (mut row, g) in out.axis_iter_mut(Axis(0)).zip(normals.axis_iter(Axis(0))) {
                for i in 0..n {
                    scratch[i] = g[i];
                }
                matvec(&root, &scratch, &mut kicked);
                for i in 0..n {
                    row[i] = params.prior_mean()[i] + kicked[i];
                }
            }
        }
    }
    Ok(out)
}

/// Euler path of `d mu = theta (delta - mu) dt + zeta dBbar` from the given
/// per-path initial values. Zero-filled increments reproduce the
/// deterministic mean ODE.
pub fn simulate_ou_drift(
    params: &OuBlockParams,
    noise: &Increments,
    initial: ArrayView2<'_, f64>,
    grid: &TimeGrid,
) -> Result<RealPath> {
    let n = params.dim();
    let q = params.noise_dim();
    let n_paths = noise.n_paths();
    if noise.dim() != q {
        return Err(LabError::shape(format!(
            "drift noise has dimension {}, zeta has {} columns",
            noise.dim(),
            q
        )));
    }
    if noise.n_steps() != grid.n_steps() {
        return Err(LabError::shape(format!(
            "drift noise has {} steps, grid has {}",
            noise.n_steps(),
            grid.n_steps()
        )));
    }
    if initial.nrows() != n_paths || initial.ncols() != n {
        return Err(LabError::shape(format!(
            "initial drift values are {}x{}, expected {}x{}",
            initial.nrows(),
            initial.ncols(),
            n_paths,
            n
        )));
    }
    let dt = grid.dt();
    let n_steps = grid.n_steps();
    let theta = params.theta();
    let zeta = params.zeta();
    let delta = params.delta();
    let mut out = RealPath::zeros(n_paths, grid, n);
    let noise_view = noise.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(noise_view.axis_iter(Axis(0)))
        .and(initial.axis_iter(Axis(0)))
        .par_for_each(|mut path, incs, init| {
            let mut cur = vec![0.0; n];
            let mut gap = vec![0.0; n];
            let mut pull = vec![0.0; n];
            let mut shock = vec![0.0; q];
            let mut kick = vec![0.0; n];
            for i in 0..n {
                cur[i] = init[i];
                path[[0, i]] = cur[i];
            }
            for step in 0..n_steps {
                for i in 0..n {
                    gap[i] = delta[i] - cur[i];
                }
                matvec(theta, &gap, &mut pull);
                for (j, slot) in shock.iter_mut().enumerate() {
                    *slot = incs[[step, j]];
                }
                matvec(zeta, &shock, &mut kick);
                for i in 0..n {
                    cur[i] += pull[i] * dt + kick[i];
                    path[[step + 1, i]] = cur[i];
                }
            }
        });
    Ok(out)
}

/// Observation drift `eta = Sigma^{-1} (mu - A/2)` evaluated at every node of
/// a drift path. Applied to a filtered mean it yields `etahat`.
pub fn observation_drift_path(drift: &RealPath, obs: &ObservationModel) -> Result<RealPath> {
    let n = obs.dim();
    if drift.dim() != n {
        return Err(LabError::shape(format!(
            "drift path has dimension {}, volatility block is {n}-dimensional",
            drift.dim()
        )));
    }
    let n_nodes = drift.n_nodes();
    let half_a: Vec<f64> = obs.inst_variance().iter().map(|a| 0.5 * a).collect();
    let sigma_inv = obs.sigma_inv();
    let mut out = RealPath::zeros(drift.n_paths(), &grid_like(drift), n);
    let drift_view = drift.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(drift_view.axis_iter(Axis(0)))
        .par_for_each(|mut eta_row, mu_row| {
            let mut gap = vec![0.0; n];
            let mut eta = vec![0.0; n];
            for k in 0..n_nodes {
                for i in 0..n {
                    gap[i] = mu_row[[k, i]] - half_a[i];
                }
                matvec(sigma_inv, &gap, &mut eta);
                for i in 0..n {
                    eta_row[[k, i]] = eta[i];
                }
            }
        });
    Ok(out)
}

/// Market price of risk `b = Sigma^{-1} (mu - r 1)` evaluated at every node
/// of a drift path; on a filtered mean this is `bhat`, the only stochastic
/// ingredient of the filtered adjoint.
pub fn price_of_risk_path(
    drift: &RealPath,
    obs: &ObservationModel,
    grid: &TimeGrid,
) -> Result<RealPath> {
    let n = obs.dim();
    if drift.dim() != n {
        return Err(LabError::shape(format!(
            "drift path has dimension {}, volatility block is {n}-dimensional",
            drift.dim()
        )));
    }
    if drift.n_nodes() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "drift path has {} nodes, grid has {}",
            drift.n_nodes(),
            grid.n_nodes()
        )));
    }
    let n_nodes = grid.n_nodes();
    let rates: Vec<f64> = (0..n_nodes)
        .map(|k| obs.rate().value(grid.node(k)))
        .collect();
    let sigma_inv = obs.sigma_inv();
    let mut out = RealPath::zeros(drift.n_paths(), grid, n);
    let drift_view = drift.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(drift_view.axis_iter(Axis(0)))
        .par_for_each(|mut b_row, mu_row| {
            let mut gap = vec![0.0; n];
            let mut b = vec![0.0; n];
            for (k, rate) in rates.iter().enumerate() {
                for i in 0..n {
                    gap[i] = mu_row[[k, i]] - rate;
                }
                matvec(sigma_inv, &gap, &mut b);
                for i in 0..n {
                    b_row[[k, i]] = b[i];
                }
            }
        });
    Ok(out)
}

fn grid_like(path: &RealPath) -> TimeGrid {
    // Internal helper: RealPath::zeros only uses the node count, so horizon 1
    // with the matching number of steps is enough to size the output.
    TimeGrid::new(1.0, path.n_nodes() - 1).expect("paths always have >= 3 nodes")
}

/// Observation path `Y` accumulated from a drift path and its stock noise:
/// `Y(0) = 0`, `Delta Y_j = eta(t_j) dt + Delta W_j`.
pub fn synthesize_observations(
    drift: &RealPath,
    obs: &ObservationModel,
    noise: &Increments,
    grid: &TimeGrid,
) -> Result<RealPath> {
    check_block_shapes(drift, obs, noise, grid, "synthesize_observations")?;
    let eta = observation_drift_path(drift, obs)?;
    let n = obs.dim();
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let mut out = RealPath::zeros(drift.n_paths(), grid, n);
    let eta_view = eta.view();
    let noise_view = noise.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(eta_view.axis_iter(Axis(0)))
        .and(noise_view.axis_iter(Axis(0)))
        .par_for_each(|mut y_row, eta_row, inc_row| {
            for i in 0..n {
                let mut acc = 0.0;
                y_row[[0, i]] = 0.0;
                for j in 0..n_steps {
                    acc += eta_row[[j, i]] * dt + inc_row[[j, i]];
                    y_row[[j + 1, i]] = acc;
                }
            }
        });
    Ok(out)
}

/// Log-price increments of the block's stocks under Euler simulation of
/// `d log S_i = (mu_i - A_i/2) dt + (Sigma dW)_i`.
pub fn log_stock_increments(
    drift: &RealPath,
    obs: &ObservationModel,
    noise: &Increments,
    grid: &TimeGrid,
) -> Result<Increments> {
    check_block_shapes(drift, obs, noise, grid, "log_stock_increments")?;
    let n = obs.dim();
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let half_a: Vec<f64> = obs.inst_variance().iter().map(|a| 0.5 * a).collect();
    let sigma = obs.sigma();
    let mut out = Increments::zeros(drift.n_paths(), grid, n);
    let drift_view = drift.view();
    let noise_view = noise.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(drift_view.axis_iter(Axis(0)))
        .and(noise_view.axis_iter(Axis(0)))
        .par_for_each(|mut log_row, mu_row, inc_row| {
            let mut shock = vec![0.0; n];
            let mut diffused = vec![0.0; n];
            for j in 0..n_steps {
                for (i, slot) in shock.iter_mut().enumerate() {
                    *slot = inc_row[[j, i]];
                }
                matvec(sigma, &shock, &mut diffused);
                for i in 0..n {
                    log_row[[j, i]] = (mu_row[[j, i]] - half_a[i]) * dt + diffused[i];
                }
            }
        });
    Ok(out)
}

/// Observation path recovered from realized stock log-increments:
/// `Delta Y = Sigma^{-1} Delta log S`, cumulated from zero. Driven by the
/// same noise this agrees with [`synthesize_observations`] node by node up to
/// float rounding, because
/// `Sigma^{-1} ((mu - A/2) dt + Sigma dW) = eta dt + dW`.
pub fn stocks_to_observations(
    log_increments: &Increments,
    obs: &ObservationModel,
    grid: &TimeGrid,
) -> Result<RealPath> {
    let n = obs.dim();
    if log_increments.dim() != n {
        return Err(LabError::shape(format!(
            "log increments have dimension {}, volatility block is {n}-dimensional",
            log_increments.dim()
        )));
    }
    if log_increments.n_steps() != grid.n_steps() {
        return Err(LabError::shape(format!(
            "log increments have {} steps, grid has {}",
            log_increments.n_steps(),
            grid.n_steps()
        )));
    }
    let n_steps = grid.n_steps();
    let sigma_inv = obs.sigma_inv();
    let mut out = RealPath::zeros(log_increments.n_paths(), grid, n);
    let inc_view = log_increments.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(inc_view.axis_iter(Axis(0)))
        .par_for_each(|mut y_row, inc_row| {
            let mut step_inc = vec![0.0; n];
            let mut dy = vec![0.0; n];
            let mut acc = vec![0.0; n];
            for i in 0..n {
                y_row[[0, i]] = 0.0;
            }
            for j in 0..n_steps {
                for (i, slot) in step_inc.iter_mut().enumerate() {
                    *slot = inc_row[[j, i]];
                }
                matvec(sigma_inv, &step_inc, &mut dy);
                for i in 0..n {
                    acc[i] += dy[i];
                    y_row[[j + 1, i]] = acc[i];
                }
            }
        });
    Ok(out)
}

fn check_block_shapes(
    drift: &RealPath,
    obs: &ObservationModel,
    noise: &Increments,
    grid: &TimeGrid,
    what: &str,
) -> Result<()> {
    let n = obs.dim();
    if drift.dim() != n || noise.dim() != n {
        return Err(LabError::shape(format!(
            "{what}: drift dimension {} and noise dimension {} must both equal the block dimension {n}",
            drift.dim(),
            noise.dim()
        )));
    }
    if drift.n_paths() != noise.n_paths() {
        return Err(LabError::shape(format!(
            "{what}: drift has {} paths, noise has {}",
            drift.n_paths(),
            noise.n_paths()
        )));
    }
    if drift.n_nodes() != grid.n_nodes() || noise.n_steps() != grid.n_steps() {
        return Err(LabError::shape(format!(
            "{what}: drift has {} nodes and noise {} steps, grid expects {} and {}",
            drift.n_nodes(),
            noise.n_steps(),
            grid.n_nodes(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// Everything the filter produces for one block: the filtered mean, the
/// deterministic error covariance it was run with, the innovation increments
/// `dWhat = dY - etahat dt`, and the derived coefficient paths `etahat` and
/// `bhat`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    filtered_mean: RealPath,
    error_cov: Vec<DMatrix<f64>>,
    innovations: Increments,
    observation_drift: RealPath,
    price_of_risk: RealPath,
}

impl FilterOutput {
    pub fn filtered_mean(&self) -> &RealPath {
        &self.filtered_mean
    }

    /// Riccati covariance at every node (deterministic, shared by all paths).
    pub fn error_cov(&self) -> &[DMatrix<f64>] {
        &self.error_cov
    }

    pub fn innovations(&self) -> &Increments {
        &self.innovations
    }

    /// `etahat` at every node.
    pub fn observation_drift(&self) -> &RealPath {
        &self.observation_drift
    }

    /// `bhat` at every node.
    pub fn price_of_risk(&self) -> &RealPath {
        &self.price_of_risk
    }
}

/// Kalman-Bucy mean update driven by an observation path:
/// `muhat(0) = m0`,
/// `muhat_{j+1} = muhat_j + theta (delta - muhat_j) dt + P_j Sigma^{-T}
/// (Delta Y_j - etahat_j dt)`, with the gain evaluated at the left node of
/// each step.
pub fn run_kalman_bucy(
    observations: &RealPath,
    params: &OuBlockParams,
    obs: &ObservationModel,
    error_cov: &[DMatrix<f64>],
    grid: &TimeGrid,
) -> Result<FilterOutput> {
    let n = params.dim();
    if obs.dim() != n {
        return Err(LabError::shape(format!(
            "volatility block is {}-dimensional but drift block is {n}-dimensional",
            obs.dim()
        )));
    }
    if observations.dim() != n {
        return Err(LabError::shape(format!(
            "observation path has dimension {}, drift block has {n}",
            observations.dim()
        )));
    }
    if observations.n_nodes() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "observation path has {} nodes, grid has {}",
            observations.n_nodes(),
            grid.n_nodes()
        )));
    }
    if error_cov.len() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "error covariance path has {} nodes, grid has {}",
            error_cov.len(),
            grid.n_nodes()
        )));
    }
    for (k, p) in error_cov.iter().enumerate() {
        if p.nrows() != n || p.ncols() != n {
            return Err(LabError::shape(format!(
                "error covariance at node {k} is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
    }
    let n_paths = observations.n_paths();
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sigma_inv_t = obs.sigma_inv().transpose();
    let gains: Vec<DMatrix<f64>> = (0..n_steps).map(|j| &error_cov[j] * &sigma_inv_t).collect();
    let half_a: Vec<f64> = obs.inst_variance().iter().map(|a| 0.5 * a).collect();
    let theta = params.theta();
    let delta = params.delta();
    let m0 = params.prior_mean();
    let sigma_inv = obs.sigma_inv();

    let mut filtered = RealPath::zeros(n_paths, grid, n);
    let mut eta_hat = RealPath::zeros(n_paths, grid, n);
    let mut innovations = Increments::zeros(n_paths, grid, n);
    let obs_view = observations.view();
    Zip::from(filtered.values_mut().axis_iter_mut(Axis(0)))
        .and(eta_hat.values_mut().axis_iter_mut(Axis(0)))
        .and(innovations.values_mut().axis_iter_mut(Axis(0)))
        .and(obs_view.axis_iter(Axis(0)))
        .par_for_each(|mut mu_row, mut eta_row, mut innov_row, y_row| {
            let mut mu = vec![0.0; n];
            let mut gap = vec![0.0; n];
            let mut eta = vec![0.0; n];
            let mut pull = vec![0.0; n];
            let mut innov = vec![0.0; n];
            let mut kick = vec![0.0; n];
            for i in 0..n {
                mu[i] = m0[i];
                mu_row[[0, i]] = mu[i];
            }
            for j in 0..n_steps {
                for i in 0..n {
                    gap[i] = mu[i] - half_a[i];
                }
                matvec(sigma_inv, &gap, &mut eta);
                for i in 0..n {
                    eta_row[[j, i]] = eta[i];
                    innov[i] = y_row[[j + 1, i]] - y_row[[j, i]] - eta[i] * dt;
                    innov_row[[j, i]] = innov[i];
                }
                for i in 0..n {
                    gap[i] = delta[i] - mu[i];
                }
                matvec(theta, &gap, &mut pull);
                matvec(&gains[j], &innov, &mut kick);
                for i in 0..n {
                    mu[i] += pull[i] * dt + kick[i];
                    mu_row[[j + 1, i]] = mu[i];
                }
            }
            for i in 0..n {
                gap[i] = mu[i] - half_a[i];
            }
            matvec(sigma_inv, &gap, &mut eta);
            for i in 0..n {
                eta_row[[n_steps, i]] = eta[i];
            }
        });

    let price_of_risk = price_of_risk_path(&filtered, obs, grid)?;
    Ok(FilterOutput {
        filtered_mean: filtered,
        error_cov: error_cov.to_vec(),
        innovations,
        observation_drift: eta_hat,
        price_of_risk,
    })
}

/// Closed-form filtered adjoint
/// `phat(t) = -M exp{ int_0^t (-r - |bhat|^2 / 2) ds - int_0^t bhat . dWhat }`,
/// assembled from a stochastic exponential of the filtered price of risk
/// against the innovations. Strictly negative on every path.
pub fn filtered_adjoint(
    price_of_risk: &RealPath,
    innovations: &Increments,
    m_weight: f64,
    rate: ShortRate,
    grid: &TimeGrid,
) -> Result<RealPath> {
    if !(m_weight > 0.0) || !m_weight.is_finite() {
        return Err(LabError::invalid(format!(
            "terminal wealth weight must be positive and finite, got {m_weight}"
        )));
    }
    let martingale = stochastic_exponential(price_of_risk, innovations, ExponentSign::Minus, grid)?;
    let discounts: Vec<f64> = rate
        .integral_nodes(grid)
        .iter()
        .map(|ri| (-ri).exp())
        .collect();
    let n_nodes = grid.n_nodes();
    let mut out = RealPath::zeros(price_of_risk.n_paths(), grid, 1);
    let mart_view = martingale.view();
    Zip::from(out.values_mut().axis_iter_mut(Axis(0)))
        .and(mart_view.axis_iter(Axis(0)))
        .par_for_each(|mut p_row, m_row| {
            for k in 0..n_nodes {
                p_row[[k, 0]] = -m_weight * discounts[k] * m_row[[k, 0]];
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use crate::stochastic_core::{counter_uniform, sample_brownian_bundle, STREAM_PRIOR};
    use ndarray::Array3;

    fn scalar_params(theta: f64, delta: f64, zeta: f64, m0: f64, p0: f64) -> OuBlockParams {
        OuBlockParams::new(
            DMatrix::from_element(1, 1, theta),
            DVector::from_element(1, delta),
            DMatrix::from_element(1, 1, zeta),
            DVector::from_element(1, m0),
            DMatrix::from_element(1, 1, p0),
        )
        .unwrap()
    }

    fn scalar_obs(sigma: f64, r: f64) -> ObservationModel {
        ObservationModel::new(DMatrix::from_element(1, 1, sigma), ShortRate::Constant(r)).unwrap()
    }

    fn constant_path(n_paths: usize, grid: &TimeGrid, value: f64) -> RealPath {
        RealPath::from_array(Array3::from_elem((n_paths, grid.n_nodes(), 1), value), grid).unwrap()
    }

    /// Positive root of `p^2 / sigma^2 + 2 theta p - zeta^2 = 0`.
    fn scalar_steady_state(theta: f64, sigma: f64, zeta: f64) -> f64 {
        let s2 = sigma * sigma;
        s2 * (-theta + (theta * theta + zeta * zeta / s2).sqrt())
    }

    #[test]
    fn riccati_zero_noise_zero_prior_stays_zero() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let params = scalar_params(1.0, 0.0, 0.0, 0.0, 0.0);
        let obs = scalar_obs(1.0, 0.0);
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        for p in &cov {
            assert_eq!(p[(0, 0)], 0.0);
        }
    }

    #[test]
    fn riccati_matches_separable_closed_form() {
        // theta = 0, sigma = 1, zeta = 0, P0 = 1 has the explicit solution
        // P(t) = 1 / (1 + t).
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let params = scalar_params(0.0, 0.0, 0.0, 0.0, 1.0);
        let obs = scalar_obs(1.0, 0.0);
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        let tol = 10.0 * grid.dt() * grid.dt();
        for (k, p) in cov.iter().enumerate() {
            let exact = 1.0 / (1.0 + grid.node(k));
            assert!(
                (p[(0, 0)] - exact).abs() <= tol,
                "node {k}: {} vs {exact}",
                p[(0, 0)]
            );
        }
    }

    #[test]
    fn riccati_reaches_scalar_steady_state() {
        let grid = TimeGrid::new(5.0, 640).unwrap();
        let params = scalar_params(1.0, 0.0, 1.0, 0.0, 1.0);
        let obs = scalar_obs(1.0, 0.0);
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        let last = cov.last().unwrap()[(0, 0)];
        let target = 2.0f64.sqrt() - 1.0;
        assert!(
            (last - target).abs() <= 1e-6,
            "P(5) = {last}, expected {target}"
        );
    }

    #[test]
    fn riccati_steady_state_matches_quadratic_root_on_random_triples() {
        // Long horizon so every trajectory has fully relaxed; the linearized
        // decay rate is at least 2 sqrt(theta^2 + zeta^2 / sigma^2) >= 1.2
        // for the sampled ranges, giving e^{-24} residual transients.
        let grid = TimeGrid::new(20.0, 2560).unwrap();
        for case in 0..20u64 {
            let theta = 0.5 + counter_uniform(2024, 90, case, 0, 0);
            let sigma = 0.5 + counter_uniform(2024, 90, case, 1, 0);
            let zeta = 0.5 + counter_uniform(2024, 90, case, 2, 0);
            let params = scalar_params(theta, 0.0, zeta, 0.0, 1.0);
            let obs = scalar_obs(sigma, 0.0);
            let cov = solve_riccati(&params, &obs, &grid).unwrap();
            let last = cov.last().unwrap()[(0, 0)];
            let target = scalar_steady_state(theta, sigma, zeta);
            assert!(
                (last - target).abs() <= 1e-6,
                "case {case}: theta={theta} sigma={sigma} zeta={zeta}: {last} vs {target}"
            );
        }
    }

    #[test]
    fn riccati_output_is_symmetric_and_psd() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.8]);
        let delta = DVector::from_vec(vec![0.06, 0.1]);
        let zeta = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.02, 0.08]);
        let m0 = delta.clone();
        let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.02]));
        let params = OuBlockParams::new(theta, delta, zeta, m0, p0).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.0, 0.3]);
        let obs = ObservationModel::new(sigma, ShortRate::Constant(0.03)).unwrap();
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        for p in &cov {
            let asym = (p - p.transpose()).norm();
            assert!(asym <= 1e-10, "asymmetry {asym}");
            assert!(min_symmetric_eigenvalue(p) >= -1e-8);
        }
    }

    #[test]
    fn riccati_reports_numerical_failure_on_blow_up() {
        // A coarse grid with a stiff gain term drives the one-step method
        // far past the PSD cone.
        let grid = TimeGrid::new(2.0, 2).unwrap();
        let params = scalar_params(0.0, 0.0, 0.0, 0.0, 1.0);
        let obs = scalar_obs(0.05, 0.0);
        let err = solve_riccati(&params, &obs, &grid).unwrap_err();
        assert!(matches!(err, LabError::NumericalFailure { .. }), "{err}");
    }

    #[test]
    fn observation_model_rejects_singular_volatility() {
        let err = ObservationModel::new(DMatrix::from_element(1, 1, 0.0), ShortRate::Constant(0.0))
            .unwrap_err();
        assert!(matches!(err, LabError::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn block_params_reject_bad_priors() {
        let asym = OuBlockParams::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
        );
        assert!(asym.is_err());
        let indefinite = OuBlockParams::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, -0.5),
        );
        assert!(indefinite.is_err());
    }

    #[test]
    fn ou_drift_stays_at_fixed_point_without_noise() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let params = scalar_params(2.0, 0.07, 0.0, 0.07, 0.0);
        let noise = Increments::zeros(3, &grid, 1);
        let init = initial_drift_values(&params, InitialLaw::PriorMean, 3).unwrap();
        let path = simulate_ou_drift(&params, &noise, init.view(), &grid).unwrap();
        for p in 0..3 {
            for k in 0..grid.n_nodes() {
                assert_eq!(path.at(p, k, 0), 0.07);
            }
        }
    }

    #[test]
    fn ou_drift_euler_decay_matches_powers_and_exponential() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let params = scalar_params(1.0, 0.0, 0.0, 1.0, 0.0);
        let noise = Increments::zeros(1, &grid, 1);
        let init = initial_drift_values(&params, InitialLaw::PriorMean, 1).unwrap();
        let path = simulate_ou_drift(&params, &noise, init.view(), &grid).unwrap();
        let dt = grid.dt();
        let mut power = 1.0;
        for k in 0..grid.n_nodes() {
            let value = path.scalar(0, k);
            assert!((value - power).abs() <= 1e-12, "node {k}");
            assert!(
                (value - (-grid.node(k)).exp()).abs() <= 5.0 * dt,
                "node {k}: Euler {value} vs exact {}",
                (-grid.node(k)).exp()
            );
            power *= 1.0 - dt;
        }
    }

    #[test]
    fn ou_drift_long_run_mean_reverts_to_delta() {
        let grid = TimeGrid::new(3.0, 192).unwrap();
        let params = scalar_params(4.0, 0.5, 0.6, 1.5, 0.0);
        let n_paths = 100_000;
        let bundle = sample_brownian_bundle(&grid, (0, 1, 0), n_paths, 7).unwrap();
        let init = initial_drift_values(&params, InitialLaw::PriorMean, n_paths).unwrap();
        let path = simulate_ou_drift(&params, bundle.drift_noise(1), init.view(), &grid).unwrap();
        let last: Vec<f64> = (0..n_paths)
            .map(|p| path.scalar(p, grid.n_steps()))
            .collect();
        let est = stats::Estimate::from_samples(&last);
        assert!(
            (est.mean - 0.5).abs() <= 4.0 * est.stderr,
            "mean {} +- {}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn observations_single_step_hand_value() {
        // One Euler step of dY = Sigma^{-1}(mu - A/2) dt + dW with dt = 0.25
        // and dW = 0.1. Two parameterizations give hand-checkable values:
        // unit volatility with mu - A/2 = 0.04, and sigma = 0.2 (A = 0.04)
        // with mu = 0.06.
        let grid = TimeGrid::new(0.5, 2).unwrap();
        let mut noise = Increments::zeros(1, &grid, 1);
        noise.values_mut()[[0, 0, 0]] = 0.1;

        let unit_vol = scalar_obs(1.0, 0.0);
        let mu = constant_path(1, &grid, 0.54);
        let y = synthesize_observations(&mu, &unit_vol, &noise, &grid).unwrap();
        assert!((y.scalar(0, 1) - 0.11).abs() <= 1e-15, "{}", y.scalar(0, 1));

        let small_vol = scalar_obs(0.2, 0.0);
        let mu = constant_path(1, &grid, 0.06);
        let y = synthesize_observations(&mu, &small_vol, &noise, &grid).unwrap();
        assert!((y.scalar(0, 1) - 0.15).abs() <= 1e-15, "{}", y.scalar(0, 1));
    }

    #[test]
    fn observations_reduce_to_noise_when_drift_cancels() {
        // mu == A/2 makes eta vanish, so Y is the running sum of dW.
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let obs = scalar_obs(0.2, 0.0);
        let bundle = sample_brownian_bundle(&grid, (1, 0, 0), 5, 11).unwrap();
        let noise = bundle.stock_noise(0);
        let mu = constant_path(5, &grid, 0.02);
        let y = synthesize_observations(&mu, &obs, noise, &grid).unwrap();
        for p in 0..5 {
            let mut acc = 0.0;
            for j in 0..grid.n_steps() {
                acc += noise.at(p, j, 0);
                assert!((y.scalar(p, j + 1) - acc).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn stock_route_identity_volatility_passes_increments_through() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let obs = scalar_obs(1.0, 0.0);
        let mut logs = Increments::zeros(1, &grid, 1);
        for (j, v) in [0.05, -0.02, 0.03, 0.01].iter().enumerate() {
            logs.values_mut()[[0, j, 0]] = *v;
        }
        let y = stocks_to_observations(&logs, &obs, &grid).unwrap();
        let mut acc = 0.0;
        for j in 0..4 {
            acc += logs.at(0, j, 0);
            assert_eq!(y.scalar(0, j + 1), acc);
        }
    }

    #[test]
    fn stock_route_two_by_two_hand_value() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let obs = ObservationModel::new(sigma, ShortRate::Constant(0.0)).unwrap();
        let mut logs = Increments::zeros(1, &grid, 2);
        logs.values_mut()[[0, 0, 0]] = 0.2;
        logs.values_mut()[[0, 0, 1]] = 0.4;
        let y = stocks_to_observations(&logs, &obs, &grid).unwrap();
        assert!((y.at(0, 1, 0) - 0.1).abs() <= 1e-16);
        assert!((y.at(0, 1, 1) - 0.1).abs() <= 1e-16);
    }

    #[test]
    fn observation_routes_agree_pathwise() {
        // Direct synthesis and the stock-price route differ only by the
        // order of float operations in Sigma^{-1}((mu - A/2) dt + Sigma dW).
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.8]);
        let delta = DVector::from_vec(vec![0.06, 0.1]);
        let zeta = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.02, 0.08]);
        let params =
            OuBlockParams::new(theta, delta.clone(), zeta, delta, DMatrix::zeros(2, 2)).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.0, 0.3]);
        let obs = ObservationModel::new(sigma, ShortRate::Constant(0.03)).unwrap();
        let n_paths = 500;
        let bundle = sample_brownian_bundle(&grid, (0, 2, 0), n_paths, 13).unwrap();
        let init = initial_drift_values(&params, InitialLaw::PriorMean, n_paths).unwrap();
        let mu = simulate_ou_drift(&params, bundle.drift_noise(1), init.view(), &grid).unwrap();
        let direct = synthesize_observations(&mu, &obs, bundle.stock_noise(1), &grid).unwrap();
        let logs = log_stock_increments(&mu, &obs, bundle.stock_noise(1), &grid).unwrap();
        let via_stocks = stocks_to_observations(&logs, &obs, &grid).unwrap();
        let mut worst = 0.0f64;
        for p in 0..n_paths {
            for k in 0..grid.n_nodes() {
                for c in 0..2 {
                    worst = worst.max((direct.at(p, k, c) - via_stocks.at(p, k, c)).abs());
                }
            }
        }
        assert!(worst <= 1e-12, "max gap {worst}");
    }

    #[test]
    fn filter_is_exact_without_uncertainty() {
        // zeta = 0, P0 = 0, prior mean equal to the true constant drift:
        // the gain vanishes, so muhat tracks mu exactly and the innovations
        // reproduce the driving noise.
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let params = scalar_params(1.0, 0.06, 0.0, 0.06, 0.0);
        let obs = scalar_obs(0.2, 0.0);
        let n_paths = 4;
        let bundle = sample_brownian_bundle(&grid, (0, 1, 0), n_paths, 3).unwrap();
        let init = initial_drift_values(&params, InitialLaw::PriorMean, n_paths).unwrap();
        let mu = simulate_ou_drift(&params, bundle.drift_noise(1), init.view(), &grid).unwrap();
        let y = synthesize_observations(&mu, &obs, bundle.stock_noise(1), &grid).unwrap();
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        let out = run_kalman_bucy(&y, &params, &obs, &cov, &grid).unwrap();
        for p in 0..n_paths {
            for k in 0..grid.n_nodes() {
                assert_eq!(out.filtered_mean().at(p, k, 0), 0.06);
            }
            for j in 0..grid.n_steps() {
                let gap = (out.innovations().at(p, j, 0) - bundle.stock_noise(1).at(p, j, 0)).abs();
                assert!(gap <= 1e-13, "path {p} step {j}: {gap}");
            }
        }
    }

    /// Scenario used by the statistical filter tests: correctly specified
    /// prior (initial values drawn from it), moderate uncertainty.
    fn consistency_setup(
        n_paths: usize,
        n_steps: usize,
        seed: u64,
    ) -> (
        TimeGrid,
        OuBlockParams,
        ObservationModel,
        RealPath,
        FilterOutput,
    ) {
        let grid = TimeGrid::new(1.0, n_steps).unwrap();
        let params = scalar_params(1.0, 0.08, 0.1, 0.08, 0.005);
        let obs = scalar_obs(0.2, 0.03);
        let bundle = sample_brownian_bundle(&grid, (0, 1, 0), n_paths, seed).unwrap();
        let init = initial_drift_values(
            &params,
            InitialLaw::PriorSample {
                seed,
                stream: STREAM_PRIOR[0],
            },
            n_paths,
        )
        .unwrap();
        let mu = simulate_ou_drift(&params, bundle.drift_noise(1), init.view(), &grid).unwrap();
        let y = synthesize_observations(&mu, &obs, bundle.stock_noise(1), &grid).unwrap();
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        let out = run_kalman_bucy(&y, &params, &obs, &cov, &grid).unwrap();
        (grid, params, obs, mu, out)
    }

    #[test]
    fn filter_error_covariance_tracks_riccati() {
        let n_paths = 4000;
        let (_grid, _, _, mu, out) = consistency_setup(n_paths, 64, 21);
        for probe in [13usize, 26, 38, 51, 64] {
            let errs: Vec<f64> = (0..n_paths)
                .map(|p| mu.scalar(p, probe) - out.filtered_mean().scalar(p, probe))
                .collect();
            let var = stats::sample_variance(&errs);
            let predicted = out.error_cov()[probe][(0, 0)];
            let stderr = var * (2.0 / (n_paths as f64 - 1.0)).sqrt();
            let z = (var - predicted) / stderr;
            assert!(
                z.abs() <= 5.0,
                "probe {probe}: empirical {var:.3e} vs Riccati {predicted:.3e} (z = {z:.2})"
            );
        }
    }

    #[test]
    fn innovations_have_brownian_moments() {
        let n_paths = 4000;
        let (grid, _, _, _, out) = consistency_setup(n_paths, 64, 22);
        let dt = grid.dt();
        let mut all = Vec::with_capacity(n_paths * grid.n_steps());
        for p in 0..n_paths {
            for j in 0..grid.n_steps() {
                all.push(out.innovations().at(p, j, 0));
            }
        }
        let n = all.len() as f64;
        let mean = stats::mean(&all);
        assert!(
            mean.abs() <= 4.0 * (dt / n).sqrt(),
            "innovation mean {mean:.3e}"
        );
        let var = stats::sample_variance(&all);
        let band = 5.0 * (2.0 / n).sqrt() * dt;
        assert!(
            (var - dt).abs() <= band,
            "innovation variance {var:.6e} vs dt {dt:.6e} (band {band:.2e})"
        );
    }

    #[test]
    fn price_of_risk_hand_value_and_offset_identity() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let obs = scalar_obs(2.0, 0.02);
        let mu_hat = constant_path(1, &grid, 0.10);
        let b = price_of_risk_path(&mu_hat, &obs, &grid).unwrap();
        for k in 0..grid.n_nodes() {
            assert!((b.scalar(0, k) - 0.04).abs() <= 1e-16);
        }
        // b - eta = Sigma^{-1}(A/2 - r 1) at every node, a deterministic
        // offset independent of the drift estimate.
        let eta = observation_drift_path(&mu_hat, &obs).unwrap();
        let expected = (0.5 * 4.0 - 0.02) / 2.0;
        for k in 0..grid.n_nodes() {
            let offset = b.scalar(0, k) - eta.scalar(0, k);
            assert!((offset - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn offset_identity_holds_along_filtered_paths() {
        let (grid, _, _, _, out) = consistency_setup(200, 32, 5);
        let expected = (0.5 * 0.04 - 0.03) / 0.2;
        for p in 0..out.filtered_mean().n_paths() {
            for k in 0..grid.n_nodes() {
                let offset = out.price_of_risk().at(p, k, 0) - out.observation_drift().at(p, k, 0);
                assert!((offset - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn filtered_adjoint_is_minus_weight_without_rate_or_risk() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let b = RealPath::zeros(3, &grid, 1);
        let innov = Increments::zeros(3, &grid, 1);
        let p = filtered_adjoint(&b, &innov, 1.5, ShortRate::Constant(0.0), &grid).unwrap();
        for path in 0..3 {
            for k in 0..grid.n_nodes() {
                assert_eq!(p.scalar(path, k), -1.5);
            }
        }
    }

    #[test]
    fn filtered_adjoint_discounts_deterministically() {
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let b = RealPath::zeros(1, &grid, 1);
        let innov = Increments::zeros(1, &grid, 1);
        let rho = 0.05;
        let p = filtered_adjoint(&b, &innov, 2.0, ShortRate::Constant(rho), &grid).unwrap();
        for k in 0..grid.n_nodes() {
            let exact = -2.0 * (-rho * grid.node(k)).exp();
            assert!((p.scalar(0, k) - exact).abs() <= 1e-13, "node {k}");
        }
    }

    #[test]
    fn filtered_adjoint_rejects_nonpositive_weight() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let b = RealPath::zeros(1, &grid, 1);
        let innov = Increments::zeros(1, &grid, 1);
        let err = filtered_adjoint(&b, &innov, 0.0, ShortRate::Constant(0.0), &grid).unwrap_err();
        assert!(matches!(err, LabError::InvalidArgument(_)));
    }

    #[test]
    fn filtered_adjoint_matches_euler_scheme() {
        // Deterministic filter regime (zeta = 0, P0 = 0, prior at the fixed
        // point) so bhat is the constant (m0 - r)/sigma = 0.2 and the only
        // discrepancy against a hand-rolled Euler integration of
        // dp = -r p dt - bhat p dWhat is the scheme gap. The constant 5 was
        // calibrated on this fixture: the pathwise log-ratio fluctuation is
        // about bhat^2 sqrt(T dt / 2), far inside 5 dt at this resolution.
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let params = scalar_params(1.0, 0.1, 0.0, 0.1, 0.0);
        let obs = scalar_obs(0.4, 0.02);
        let n_paths = 1000;
        let bundle = sample_brownian_bundle(&grid, (0, 1, 0), n_paths, 31).unwrap();
        let init = initial_drift_values(&params, InitialLaw::PriorMean, n_paths).unwrap();
        let mu = simulate_ou_drift(&params, bundle.drift_noise(1), init.view(), &grid).unwrap();
        let y = synthesize_observations(&mu, &obs, bundle.stock_noise(1), &grid).unwrap();
        let cov = solve_riccati(&params, &obs, &grid).unwrap();
        let out = run_kalman_bucy(&y, &params, &obs, &cov, &grid).unwrap();
        let closed = filtered_adjoint(
            out.price_of_risk(),
            out.innovations(),
            2.0,
            obs.rate(),
            &grid,
        )
        .unwrap();
        let dt = grid.dt();
        let r = 0.02;
        let mut worst = 0.0f64;
        for p in 0..n_paths {
            let mut euler = -2.0;
            for j in 0..grid.n_steps() {
                let b = out.price_of_risk().at(p, j, 0);
                euler += -r * euler * dt - b * euler * out.innovations().at(p, j, 0);
            }
            let exact = closed.scalar(p, grid.n_steps());
            worst = worst.max(((euler - exact) / exact).abs());
        }
        assert!(worst <= 5.0 * dt, "max relative scheme gap {worst}");
    }

    #[test]
    fn filtered_adjoint_mean_is_discounted_weight() {
        let n_paths = 10_000;
        let (grid, _, obs, _, out) = consistency_setup(n_paths, 64, 40);
        let m_weight = 2.0;
        let p = filtered_adjoint(
            out.price_of_risk(),
            out.innovations(),
            m_weight,
            obs.rate(),
            &grid,
        )
        .unwrap();
        for probe in [16usize, 32, 48, 64] {
            let compound = (0.03 * grid.node(probe)).exp();
            let samples: Vec<f64> = (0..n_paths)
                .map(|q| p.scalar(q, probe) * compound)
                .collect();
            let est = stats::Estimate::from_samples(&samples);
            assert!(
                (est.mean + m_weight).abs() <= 4.0 * est.stderr,
                "probe {probe}: mean {} +- {}",
                est.mean,
                est.stderr
            );
        }
    }

    #[test]
    fn simulate_rejects_mismatched_noise() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let params = scalar_params(1.0, 0.0, 0.1, 0.0, 0.0);
        let noise = Increments::zeros(2, &grid, 3);
        let init = initial_drift_values(&params, InitialLaw::PriorMean, 2).unwrap();
        let err = simulate_ou_drift(&params, &noise, init.view(), &grid).unwrap_err();
        assert!(matches!(err, LabError::ShapeMismatch(_)));
    }

    #[test]
    fn kalman_rejects_covariance_grid_mismatch() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let params = scalar_params(1.0, 0.08, 0.1, 0.08, 0.005);
        let obs = scalar_obs(0.2, 0.0);
        let y = RealPath::zeros(2, &grid, 1);
        let cov = vec![DMatrix::from_element(1, 1, 0.005); 3];
        let err = run_kalman_bucy(&y, &params, &obs, &cov, &grid).unwrap_err();
        assert!(matches!(err, LabError::ShapeMismatch(_)));
    }

    #[test]
    fn prior_samples_have_prior_moments() {
        let params = scalar_params(1.0, 0.08, 0.1, 0.08, 0.005);
        let n_paths = 50_000;
        let init = initial_drift_values(
            &params,
            InitialLaw::PriorSample { seed: 9, stream: 6 },
            n_paths,
        )
        .unwrap();
        let samples: Vec<f64> = init.column(0).iter().copied().collect();
        let est = stats::Estimate::from_samples(&samples);
        assert!((est.mean - 0.08).abs() <= 4.0 * est.stderr);
        let var = stats::sample_variance(&samples);
        let band = 5.0 * (2.0 / n_paths as f64).sqrt() * 0.005;
        assert!((var - 0.005).abs() <= band, "prior variance {var}");
    }
}
