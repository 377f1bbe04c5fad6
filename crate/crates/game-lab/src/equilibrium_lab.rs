//! Statistical certification of the candidate equilibrium.
//!
//! The market layer produces a closed-form candidate pair (Ibar_1, Ibar_2).
//! This module turns "is it a Nash equilibrium?" into checkable statistics:
//!
//! * `conditional_expectation` — cross-sectional least squares at a probe
//!   time, projecting per-path samples on polynomial features of one
//!   manager's own observation history {1, Y(t), Y(t)^2, int_0^t Y ds}. This
//!   is the standard regression proxy for E[. | F_t^i]; its error is
//!   reported, never hidden.
//! * `mp_residual` — the stationarity condition of the maximum principle,
//!   E[p_i + 2 L_i e^{-beta t} I_i | F_t^i] = 0. Two channels: a closed-form
//!   channel phat_i + 2 L_i e^{-beta t} I_i, which cancels algebraically at
//!   the candidate and is reported to machine precision, and a regression
//!   channel that re-estimates E[p_i | F_t^i] from raw adjoint samples and
//!   reports the cross-sectional mean gap against the filtered closed form.
//! * `nash_deviation_test` — finite-difference Gateaux probes. The cost is
//!   exactly quadratic in the own injection, so a unilateral deviation
//!   I_i -> I_i + eps v obeys DeltaJ_i(eps) = eps A + eps^2 E int L_i
//!   e^{-beta t} v^2 dt pathwise, with A = 0 at the equilibrium. Differences
//!   use common random numbers: DeltaJ(0) = 0 identically and the noise
//!   floor grows continuously in |eps|.
//! * `saddle_check` — the zero-sum mode: one cost J that manager 1 minimises
//!   and manager 2 maximises; at the saddle, manager-1 deviations cannot
//!   lower J and manager-2 deviations cannot raise it.
//! * `convexity_check` — second differences of the Hamiltonian along random
//!   control/state segments; the example Hamiltonian is affine plus
//!   L_i e^{-beta t} I_i^2, so the exact values are known.
//! * `adaptedness_audit` — reruns the world with every noise stream except
//!   the audited manager's own resampled; an adapted strategy rule must
//!   reproduce its values bit for bit.

use crate::error::{LabError, Result};
use crate::market_game::{
    adjoint_p, cost_samples, deviation_quadratic_coefficient, hamiltonian_example, simulate_market,
    simulate_market_with_seeds, GameScenario, Player, SimulatedMarket, StrategyProcess,
};
use crate::stats::{self, cross_section_fit, Estimate, RankPolicy};
use crate::stochastic_core::{broadcast_path, counter_uniform, BundleSeeds, RealPath, TimeGrid};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

/// Base-two fraction of the probe count kept away from the endpoints when
/// choosing default probe times: nodes k * n_steps / (count + 1), k = 1..count.
/// Node 0 is never probed — every observation starts at the same point, so
/// all regression features are degenerate there.
pub fn default_probe_nodes(grid: &TimeGrid, count: usize) -> Vec<usize> {
    (1..=count)
        .map(|k| (k * grid.n_steps()) / (count + 1))
        .filter(|&j| j > 0)
        .collect()
}

/// Result of one conditional-expectation regression.
#[derive(Debug, Clone)]
pub struct ConditionalEstimate {
    /// Fitted value per path: the regression estimate of E[target | F_t^i].
    pub fitted: Vec<f64>,
    /// Regression coefficients on {1, Y_c, Y_c^2, int Y_c} (raw scale).
    pub coefficients: Vec<f64>,
    /// Fraction of target variance captured by the features.
    pub r_squared: f64,
    /// Condition number of the standardized design.
    pub condition_number: f64,
}

/// Regression proxy for E[target | F_t^i] at one probe node.
///
/// Features per observation component c: Y_c(t), Y_c(t)^2 and the running
/// trapezoid integral int_0^t Y_c ds, plus an intercept. All features are
/// measurable with respect to the observation history up to the probe node.
/// Requires n_paths >= 10 x feature count; a rank-deficient design is a
/// numerical failure reporting the condition number.
pub fn conditional_expectation(
    target: &[f64],
    observations: &RealPath,
    grid: &TimeGrid,
    probe_node: usize,
) -> Result<ConditionalEstimate> {
    let n = observations.n_paths();
    if target.len() != n {
        return Err(LabError::shape(format!(
            "target has {} samples but the observation paths have {n}",
            target.len()
        )));
    }
    if observations.n_nodes() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "observation paths have {} nodes, grid expects {}",
            observations.n_nodes(),
            grid.n_nodes()
        )));
    }
    if probe_node >= grid.n_nodes() {
        return Err(LabError::invalid(format!(
            "probe node {probe_node} is outside the grid (n_nodes = {})",
            grid.n_nodes()
        )));
    }
    let dim = observations.dim();
    let k = 1 + 3 * dim;
    if n < 10 * k {
        return Err(LabError::invalid(format!(
            "conditional expectation needs at least 10 x {k} = {} paths, got {n}",
            10 * k
        )));
    }
    let dt = grid.dt();
    let mut design = Array2::zeros((n, k));
    for p in 0..n {
        design[[p, 0]] = 1.0;
        for c in 0..dim {
            let y = observations.at(p, probe_node, c);
            // Trapezoid integral of the component up to the probe node.
            let mut integral = 0.0;
            for j in 0..probe_node {
                integral += 0.5 * dt * (observations.at(p, j, c) + observations.at(p, j + 1, c));
            }
            design[[p, 1 + 3 * c]] = y;
            design[[p, 2 + 3 * c]] = y * y;
            design[[p, 3 + 3 * c]] = integral;
        }
    }
    let fit = cross_section_fit(design.view(), &[target], RankPolicy::Error)?;
    let fitted = fit.fitted.into_iter().next().unwrap();
    let mean = stats::mean(target);
    let ss_tot: f64 = target.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = target
        .iter()
        .zip(&fitted)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(ConditionalEstimate {
        fitted,
        coefficients: fit.coefficients.into_iter().next().unwrap(),
        r_squared,
        condition_number: fit.condition_number,
    })
}

/// Stationarity residuals of the maximum principle at the probe times.
#[derive(Debug, Clone)]
pub struct MpResidualReport {
    pub probe_nodes: Vec<usize>,
    pub probe_times: Vec<f64>,
    /// Per player, per probe: max over paths of
    /// |phat_i + 2 L_i e^{-beta t} I_i|. Zero to rounding at the candidate.
    pub closed_form: [Vec<f64>; 2],
    /// Per player, per probe: |cross-sectional mean of the regression
    /// estimate of E[p_i | F_t^i] minus the mean filtered adjoint|.
    pub regression: [Vec<f64>; 2],
    /// Per player, per probe: 5 x (stderr of the raw-vs-filtered adjoint
    /// gap + first-order discretization allowance M_i dt).
    pub regression_threshold: [Vec<f64>; 2],
    /// Scale used for the closed-form rounding tolerance.
    pub adjoint_scale: f64,
    pub pass: bool,
}

/// Rounding tolerance factor for the closed-form channel: the candidate is
/// built from phat by multiplying e^{beta t} and back, so a few ulps remain.
const CLOSED_FORM_TOLERANCE: f64 = 1.0e-12;

/// Evaluate the stationarity condition E[p_i + 2 L_i e^{-beta t} I_i | F_t^i]
/// at the given probe nodes for both managers.
///
/// The closed-form channel substitutes the filter's own conditional
/// expectation phat_i for p_i and must cancel at the candidate; the
/// regression channel projects raw adjoint samples p_i = -M_i D on the
/// manager's observation features and compares the cross-sectional mean of
/// the projection with the mean of phat_i. The means agree up to Monte Carlo
/// error plus an O(dt) discretization gap between the two exponentials, so
/// the threshold is 5 x (stderr + M_i dt).
pub fn mp_residual(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
    probe_nodes: &[usize],
) -> Result<MpResidualReport> {
    if probe_nodes.is_empty() {
        return Err(LabError::invalid(
            "mp_residual needs at least one probe node",
        ));
    }
    let grid = market.grid();
    for &j in probe_nodes {
        if j == 0 || j >= grid.n_nodes() {
            return Err(LabError::invalid(format!(
                "probe node {j} must be interior to the grid (1..{})",
                grid.n_nodes()
            )));
        }
    }
    let n = market.n_paths();
    let dt = grid.dt();
    let cost = market.scenario().cost();
    let mut closed_form = [Vec::new(), Vec::new()];
    let mut regression = [Vec::new(), Vec::new()];
    let mut threshold = [Vec::new(), Vec::new()];
    let mut adjoint_scale: f64 = 0.0;

    for player in [Player::One, Player::Two] {
        let idx = player.index();
        let strategy = match player {
            Player::One => i1,
            Player::Two => i2,
        };
        let phat = market.player(player).filtered_adjoint();
        let raw = adjoint_p(cost.m(player), market.deflator_path())?;
        let obs = market.player(player).observations();
        let l = cost.l(player);
        let beta = cost.beta();

        let per_probe: Vec<(f64, f64, f64, f64)> = probe_nodes
            .par_iter()
            .map(|&j| {
                let t = grid.node(j);
                let growth = 2.0 * l * (-beta * t).exp();
                let mut worst = 0.0f64;
                let mut scale = 0.0f64;
                for p in 0..n {
                    let residual = phat.at(p, j, 0) + growth * strategy.values().at(p, j, 0);
                    worst = worst.max(residual.abs());
                    scale = scale.max(phat.at(p, j, 0).abs());
                }
                // Regression channel: by the tower property the fitted mean
                // equals the raw sample mean, so the statistic is the mean
                // raw-vs-filtered adjoint gap with its iid standard error.
                let raw_samples: Vec<f64> = (0..n).map(|p| raw.at(p, j, 0)).collect();
                let fit = conditional_expectation(&raw_samples, obs, grid, j)?;
                let phat_mean = (0..n).map(|p| phat.at(p, j, 0)).sum::<f64>() / n as f64;
                let fitted_mean = stats::mean(&fit.fitted);
                let gaps: Vec<f64> = (0..n).map(|p| raw.at(p, j, 0) - phat.at(p, j, 0)).collect();
                let se = Estimate::from_samples(&gaps).stderr;
                let bound = 5.0 * (se + cost.m(player) * dt);
                Ok(((fitted_mean - phat_mean).abs(), bound, worst, scale))
            })
            .collect::<Result<Vec<_>>>()?;

        for (gap, bound, worst, scale) in per_probe {
            regression[idx].push(gap);
            threshold[idx].push(bound);
            closed_form[idx].push(worst);
            adjoint_scale = adjoint_scale.max(scale);
        }
    }

    let closed_tol = CLOSED_FORM_TOLERANCE * (1.0 + adjoint_scale);
    let pass = closed_form.iter().flatten().all(|&r| r <= closed_tol)
        && regression
            .iter()
            .zip(&threshold)
            .all(|(gaps, bounds)| gaps.iter().zip(bounds).all(|(g, b)| g <= b));

    Ok(MpResidualReport {
        probe_nodes: probe_nodes.to_vec(),
        probe_times: probe_nodes.iter().map(|&j| grid.node(j)).collect(),
        closed_form,
        regression,
        regression_threshold: threshold,
        adjoint_scale,
        pass,
    })
}

/// Direction families for unilateral deviation probes. All are bounded by 1,
/// nonnegative, and adapted to the deviating manager's own observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationFamily {
    /// v = 1.
    Constant,
    /// v(t) = e^{-t}.
    ExpDecay,
    /// v(t) = 1 / (1 + Y_1^i(t)^2): bounded, measurable in the current
    /// observation.
    BoundedObservation,
}

impl DeviationFamily {
    pub const ALL: [DeviationFamily; 3] = [
        DeviationFamily::Constant,
        DeviationFamily::ExpDecay,
        DeviationFamily::BoundedObservation,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            DeviationFamily::Constant => "constant",
            DeviationFamily::ExpDecay => "exp-decay",
            DeviationFamily::BoundedObservation => "bounded-observation",
        }
    }

    /// Build the direction path for `player` on this market.
    pub fn direction(&self, market: &SimulatedMarket, player: Player) -> RealPath {
        let grid = market.grid();
        let n = market.n_paths();
        match self {
            DeviationFamily::Constant => {
                broadcast_path(Array2::ones((grid.n_nodes(), 1)).view(), n)
            }
            DeviationFamily::ExpDecay => {
                let mut nodes = Array2::zeros((grid.n_nodes(), 1));
                for k in 0..grid.n_nodes() {
                    nodes[[k, 0]] = (-grid.node(k)).exp();
                }
                broadcast_path(nodes.view(), n)
            }
            DeviationFamily::BoundedObservation => {
                let obs = market.player(player).observations();
                let mut values = Array3::zeros((n, grid.n_nodes(), 1));
                for p in 0..n {
                    for k in 0..grid.n_nodes() {
                        let y = obs.at(p, k, 0);
                        values[[p, k, 0]] = 1.0 / (1.0 + y * y);
                    }
                }
                RealPath::from_array(values, grid).expect("shape is consistent")
            }
        }
    }
}

/// Default epsilon grid multipliers, scaled by the mean candidate injection.
const EPS_MULTIPLIERS: [f64; 7] = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];

/// Safety factor keeping clipped negative epsilons strictly admissible.
const EPS_CLIP_SAFETY: f64 = 0.999;

/// The epsilon grid for a deviation probe: multipliers x scale, with negative
/// entries dropped when they would push the strategy below zero somewhere.
fn epsilon_grid(base: &StrategyProcess, direction: &RealPath, scale: f64) -> Vec<f64> {
    // Largest eps_lo with base + eps v >= 0 everywhere: -min over v>0 of
    // base/v.
    let mut min_ratio = f64::INFINITY;
    let b = base.values();
    for p in 0..b.n_paths() {
        for j in 0..b.n_nodes() {
            let v = direction.at(p, j, 0);
            if v > 0.0 {
                min_ratio = min_ratio.min(b.at(p, j, 0) / v);
            }
        }
    }
    let eps_lo = -EPS_CLIP_SAFETY * min_ratio.max(0.0);
    EPS_MULTIPLIERS
        .iter()
        .map(|m| m * scale)
        .filter(|&e| e >= eps_lo)
        .collect()
}

/// Result of a unilateral-deviation sweep for one manager and one family.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub player: Player,
    pub family: DeviationFamily,
    /// Epsilon grid actually used (clipped to keep injections nonnegative).
    pub epsilons: Vec<f64>,
    /// Common-random-number estimates of DeltaJ_i(eps).
    pub delta_j: Vec<Estimate>,
    /// Least-squares fit a + b eps + c eps^2 through the mean differences.
    pub quad_fit: [f64; 3],
    /// Location of the fitted minimum, -b / (2c).
    pub min_location: f64,
    /// Grid spacing |0.05 x scale| used for the minimum-location verdict.
    pub grid_spacing: f64,
    /// Exact per-path quadratic coefficient estimate from second differences.
    pub quad_coefficient: Estimate,
    /// Independently seeded oracle E int L_i e^{-beta t} v^2 dt.
    pub independent_quad: Estimate,
    pub pass: bool,
}

/// Seed offset for the independently seeded quadratic-coefficient oracle.
const INDEPENDENT_ORACLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Finite-difference Gateaux probe of the Nash property for one manager.
///
/// On the frozen market, the deviated pair (I_i + eps v, I_other) is costed
/// path by path against the candidate pair, so the differences are exact
/// common-random-number samples. The verdict requires DeltaJ(eps) >= -3 se
/// on the whole grid, a fitted minimum within one grid spacing of zero, and
/// the per-path quadratic coefficient to agree with an independently seeded
/// estimate of E int L_i e^{-beta t} v^2 dt within 3 combined standard
/// errors.
pub fn nash_deviation_test(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
    player: Player,
    family: DeviationFamily,
) -> Result<DeviationReport> {
    let direction = family.direction(market, player);
    let base = match player {
        Player::One => i1,
        Player::Two => i2,
    };
    let scale = stats::mean(
        base.values()
            .values()
            .as_slice()
            .expect("contiguous layout"),
    );
    if !(scale.is_finite() && scale > 0.0) {
        return Err(LabError::invalid(format!(
            "deviation scale must be positive; the {} candidate has mean injection {scale}",
            player.label()
        )));
    }
    let epsilons = epsilon_grid(base, &direction, scale);
    let base_cost = cost_samples(market, player, i1, i2)?;

    let delta_samples: Vec<Vec<f64>> = epsilons
        .par_iter()
        .map(|&eps| -> Result<Vec<f64>> {
            if eps == 0.0 {
                return Ok(vec![0.0; market.n_paths()]);
            }
            let deviated = base.perturbed(&direction, eps)?;
            if deviated.clamped_nodes() > 0 {
                return Err(LabError::ContractViolation(format!(
                    "deviation eps = {eps} left the admissible set: {} nodes clamped",
                    deviated.clamped_nodes()
                )));
            }
            let cost = match player {
                Player::One => cost_samples(market, player, &deviated, i2)?,
                Player::Two => cost_samples(market, player, i1, &deviated)?,
            };
            Ok(cost.iter().zip(&base_cost).map(|(c, b)| c - b).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let delta_j: Vec<Estimate> = delta_samples
        .iter()
        .map(|s| Estimate::from_samples(s))
        .collect();

    // The cost is exactly quadratic in eps path by path, so two positive grid
    // points identify the per-path curvature: C_p = (D2/e2 - D1/e1)/(e2 - e1).
    let hi = epsilons.len() - 1;
    let lo = hi - 1;
    let (e1, e2) = (epsilons[lo], epsilons[hi]);
    let curvature: Vec<f64> = (0..market.n_paths())
        .map(|p| (delta_samples[hi][p] / e2 - delta_samples[lo][p] / e1) / (e2 - e1))
        .collect();
    let quad_coefficient = Estimate::from_samples(&curvature);

    // Independent oracle on a freshly seeded market with the same scenario.
    let oracle_scenario = market
        .scenario()
        .with_seed(market.scenario().seed() ^ INDEPENDENT_ORACLE_SALT);
    let oracle_market = simulate_market(&oracle_scenario)?;
    let oracle_direction = family.direction(&oracle_market, player);
    let independent_quad =
        deviation_quadratic_coefficient(&oracle_market, player, &oracle_direction)?;

    // Quadratic through the mean differences for the reported minimum.
    let mut design = Array2::zeros((epsilons.len(), 3));
    for (row, &e) in epsilons.iter().enumerate() {
        design[[row, 0]] = 1.0;
        design[[row, 1]] = e;
        design[[row, 2]] = e * e;
    }
    let means: Vec<f64> = delta_j.iter().map(|d| d.mean).collect();
    let fit = cross_section_fit(design.view(), &[&means], RankPolicy::Error)?;
    let coeff = &fit.coefficients[0];
    let quad_fit = [coeff[0], coeff[1], coeff[2]];
    let min_location = if coeff[2] > f64::EPSILON {
        -coeff[1] / (2.0 * coeff[2])
    } else {
        f64::INFINITY
    };
    let grid_spacing = 0.05 * scale;

    let one_sided = delta_j.iter().all(|d| d.mean >= -3.0 * d.stderr);
    let minimum_at_zero = min_location.abs() <= grid_spacing;
    let curvature_agrees = (quad_coefficient.mean - independent_quad.mean).abs()
        <= 3.0 * (quad_coefficient.stderr.powi(2) + independent_quad.stderr.powi(2)).sqrt();

    Ok(DeviationReport {
        player,
        family,
        epsilons,
        delta_j,
        quad_fit,
        min_location,
        grid_spacing,
        quad_coefficient,
        independent_quad,
        pass: one_sided && minimum_at_zero && curvature_agrees,
    })
}

/// Per-path samples of the zero-sum cost
/// J = int e^{-beta t} (L_1 I_1^2 - L_2 I_2^2) dt + M_1 y(0):
/// manager 1 minimises J, manager 2 maximises it.
pub fn zero_sum_cost_samples(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<Vec<f64>> {
    let j1 = cost_samples(market, Player::One, i1, i2)?;
    // J = J_1 - running_2: reuse the player-2 running part by differencing
    // the two cost channels: J_2 = running_2 + M_2 w  =>  running_2 =
    // J_2 - M_2 w, and J_1 = running_1 + M_1 w.
    let j2 = cost_samples(market, Player::Two, i1, i2)?;
    let wealth = crate::market_game::wealth_samples(market, i1, i2)?;
    let m2 = market.scenario().cost().m(Player::Two);
    Ok(j1
        .iter()
        .zip(&j2)
        .zip(&wealth)
        .map(|((a, b), w)| a - (b - m2 * w))
        .collect())
}

/// Saddle verdict for one family of deviations on the zero-sum cost.
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub family: DeviationFamily,
    /// (eps, DeltaJ) for manager-1 deviations: must satisfy mean >= -3 se.
    pub player_one: Vec<(f64, Estimate)>,
    /// (eps, DeltaJ) for manager-2 deviations: must satisfy mean <= +3 se.
    pub player_two: Vec<(f64, Estimate)>,
    pub pass: bool,
}

/// Verdict logic shared by the market-level check and oracle toys: the
/// minimiser's deviations cannot lower the cost, the maximiser's cannot
/// raise it. Flipping `player_one_minimises` flips both inequalities.
pub fn saddle_verdict(
    player_one: &[(f64, Estimate)],
    player_two: &[(f64, Estimate)],
    player_one_minimises: bool,
) -> bool {
    let (sign_one, sign_two) = if player_one_minimises {
        (1.0, -1.0)
    } else {
        (-1.0, 1.0)
    };
    player_one
        .iter()
        .all(|(_, d)| sign_one * d.mean >= -3.0 * d.stderr)
        && player_two
            .iter()
            .all(|(_, d)| sign_two * d.mean >= -3.0 * d.stderr)
}

/// Zero-sum saddle check at the candidate pair (Ibar_1, 0).
///
/// With the opponent's injection entering J only through the wealth leg, the
/// zero-sum cost is decreasing in I_2, so the maximiser's best response on
/// the nonnegative control set is the zero strategy; manager-2 probes use
/// only nonnegative epsilons for the same reason. The common-random-number
/// machinery matches `nash_deviation_test`.
pub fn saddle_check(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
    family: DeviationFamily,
) -> Result<SaddleReport> {
    let base = zero_sum_cost_samples(market, i1, i2)?;
    let scale = stats::mean(i1.values().values().as_slice().expect("contiguous layout"));
    if !(scale.is_finite() && scale > 0.0) {
        return Err(LabError::invalid(
            "saddle check needs a positive mean candidate injection for its epsilon scale",
        ));
    }

    let sweep = |player: Player| -> Result<Vec<(f64, Estimate)>> {
        let direction = family.direction(market, player);
        let strategy = match player {
            Player::One => i1,
            Player::Two => i2,
        };
        let epsilons = epsilon_grid(strategy, &direction, scale);
        epsilons
            .par_iter()
            .map(|&eps| -> Result<(f64, Estimate)> {
                if eps == 0.0 {
                    return Ok((eps, Estimate::from_samples(&vec![0.0; market.n_paths()])));
                }
                let deviated = strategy.perturbed(&direction, eps)?;
                if deviated.clamped_nodes() > 0 {
                    return Err(LabError::ContractViolation(format!(
                        "saddle deviation eps = {eps} left the admissible set: {} nodes clamped",
                        deviated.clamped_nodes()
                    )));
                }
                let cost = match player {
                    Player::One => zero_sum_cost_samples(market, &deviated, i2)?,
                    Player::Two => zero_sum_cost_samples(market, i1, &deviated)?,
                };
                let diffs: Vec<f64> = cost.iter().zip(&base).map(|(c, b)| c - b).collect();
                Ok((eps, Estimate::from_samples(&diffs)))
            })
            .collect()
    };

    let player_one = sweep(Player::One)?;
    let player_two = sweep(Player::Two)?;
    let pass = saddle_verdict(&player_one, &player_two, true);
    Ok(SaddleReport {
        family,
        player_one,
        player_two,
        pass,
    })
}

/// Outcome of the Hamiltonian convexity sweep.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub n_probes: usize,
    /// Smallest second difference seen along any probed segment.
    pub min_second_difference: f64,
    pub pass: bool,
}

/// Convexity tolerance for second differences: affine directions give exact
/// zeros, quadratic ones strictly positive values.
const CONVEXITY_TOLERANCE: f64 = -1.0e-10;

/// Second differences of the example Hamiltonian along random state and
/// control segments.
///
/// The Hamiltonian is affine in (y, z, I_other) and quadratic with weight
/// l_weight e^{-beta t} in the own injection, so the second difference along
/// an injection segment is 2 l_weight e^{-beta t} h^2 exactly and zero along
/// the others. A negative l_weight models a deliberately concave Hamiltonian
/// and must produce a FAIL verdict.
pub fn convexity_check(
    l_weight: f64,
    beta: f64,
    r: f64,
    horizon: f64,
    n_probes: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    if n_probes == 0 {
        return Err(LabError::invalid(
            "convexity check needs at least one probe",
        ));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(LabError::invalid(
            "convexity check needs a positive horizon",
        ));
    }
    const STREAM: u64 = 11;
    let mut min_second = f64::INFINITY;
    for q in 0..n_probes {
        let draw = |c: u64| -> f64 { 2.0 * counter_uniform(seed, STREAM, q as u64, 0, c) - 1.0 };
        let t = horizon * counter_uniform(seed, STREAM, q as u64, 1, 0);
        let y = 2.0 * draw(0);
        let z = [draw(1), draw(2)];
        let own = draw(3).abs();
        let other = draw(4).abs();
        let p = -draw(5).abs() - 0.1;
        let b = [draw(6), draw(7)];
        let h = 0.25 * (draw(8).abs() + 0.1);

        let eval = |y: f64, z: &[f64; 2], own: f64| -> Result<f64> {
            hamiltonian_example(
                y,
                &[&z[0..1], &z[1..2]],
                own,
                other,
                p,
                r,
                &[&b[0..1], &b[1..2]],
                l_weight,
                beta,
                t,
            )
        };

        // Along the own injection (quadratic direction).
        let d2_inj = eval(y, &z, own + 2.0 * h)? - 2.0 * eval(y, &z, own + h)? + eval(y, &z, own)?;
        // Along the state (affine).
        let d2_y = eval(y + 2.0 * h, &z, own)? - 2.0 * eval(y + h, &z, own)? + eval(y, &z, own)?;
        // Along the first volatility leg (affine).
        let z1 = [z[0] + h, z[1]];
        let z2 = [z[0] + 2.0 * h, z[1]];
        let d2_z = eval(y, &z2, own)? - 2.0 * eval(y, &z1, own)? + eval(y, &z, own)?;

        min_second = min_second.min(d2_inj).min(d2_y).min(d2_z);
    }
    Ok(ConvexityReport {
        n_probes,
        min_second_difference: min_second,
        pass: min_second >= CONVEXITY_TOLERANCE,
    })
}

/// Outcome of the adaptedness audit for one strategy rule.
#[derive(Debug, Clone, Copy)]
pub struct AdaptednessAudit {
    pub player: Player,
    /// True iff the rule reproduced its values bit for bit after the foreign
    /// noise was resampled.
    pub bit_identical: bool,
    /// Largest absolute value discrepancy (0 when bit identical).
    pub max_abs_difference: f64,
}

/// Rerun the world with every noise stream except `player`'s own resampled
/// and check that the strategy rule's values are unchanged bit for bit.
///
/// An adapted rule only reads the audited manager's observation column, which
/// is a function of that manager's stock, drift and prior streams alone; any
/// dependence on the opponent's or the common block's randomness shows up as
/// a value change.
pub fn adaptedness_audit<F>(
    scenario: &GameScenario,
    player: Player,
    build: F,
) -> Result<AdaptednessAudit>
where
    F: Fn(&SimulatedMarket) -> Result<StrategyProcess>,
{
    let base = simulate_market(scenario)?;
    let foreign = simulate_market_with_seeds(
        scenario,
        BundleSeeds::reseed_foreign(scenario.seed(), player.block()),
    )?;
    let a = build(&base)?;
    let b = build(&foreign)?;
    if a.values().n_paths() != b.values().n_paths() || a.values().n_nodes() != b.values().n_nodes()
    {
        return Err(LabError::ContractViolation(
            "strategy rule changed shape under the adaptedness audit".into(),
        ));
    }
    let mut max_abs: f64 = 0.0;
    let mut identical = true;
    for (x, y) in a.values().values().iter().zip(b.values().values().iter()) {
        if x.to_bits() != y.to_bits() {
            identical = false;
            max_abs = max_abs.max((x - y).abs());
        }
    }
    Ok(AdaptednessAudit {
        player,
        bit_identical: identical,
        max_abs_difference: max_abs,
    })
}
