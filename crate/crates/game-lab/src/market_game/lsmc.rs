//! Regression-based backward solver for the linear wealth equation
//!
//! ```text
//! dy = (r y + sum_k b^k . z^k + I_1 + I_2) dt + sum_k z^k . dW^k,
//! y(T) = xi,
//! ```
//!
//! used as an independent cross-check of the deflator representation of
//! y(0). The scheme is a pathwise rollback with fitted conditional
//! expectations: at each step j,
//!
//! ```text
//! yhat_j   = fit of ybar_{j+1} on the time-j features,
//! zhat^k_j = fit of (ybar_{j+1} - yhat_j) dW^k_j / dt  (per component),
//! ybar_j   = ybar_{j+1} - dt (r yhat_j + sum_k b^k_j . zhat^k_j
//!                              + I_1(t_j) + I_2(t_j)),
//! ```
//!
//! and y(0) is the sample mean of ybar_0. Keeping the realized ybar in the
//! rollback (instead of collapsing every path to its fitted value) stops
//! regression bias from compounding across steps, and centering the
//! martingale-increment target makes zhat vanish identically when the
//! remaining wealth is deterministic.
//!
//! Rank-deficient feature matrices are handled by dropping the deficient
//! directions: degenerate scenarios legitimately collapse every non-constant
//! feature (a deterministic market has constant observations), and the
//! backward pass must still run there. The number of dropped directions and
//! the worst condition number are reported on the solution for audit.

use crate::error::{LabError, Result};
use crate::market_game::{check_strategy, Player, SimulatedMarket, StrategyProcess};
use crate::ou_filter::ShortRate;
use crate::stats::{self, cross_section_fit, Estimate, RankPolicy};
use crate::stochastic_core::RealPath;
use ndarray::Array2;

/// Feature family for the cross-sectional regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsmcBasis {
    /// Intercept only. Deliberately too coarse on markets with a live
    /// risk/volatility coupling; kept as a bias fixture.
    ConstantOnly,
    /// Componentwise powers 1..=d of both managers' observation levels.
    ObservationPoly(usize),
    /// Powers of the observation levels plus each manager's current
    /// injection rate multiplied by monomials (total degree <= d) in the
    /// filtered and realized price-of-risk components of their block. This
    /// matches the product structure of the wealth conditional expectation
    /// under the candidate controls.
    FilteredPoly(usize),
}

impl Default for LsmcBasis {
    fn default() -> Self {
        LsmcBasis::FilteredPoly(2)
    }
}

impl LsmcBasis {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LsmcBasis::ConstantOnly => Ok(()),
            LsmcBasis::ObservationPoly(d) if (1..=6).contains(&d) => Ok(()),
            LsmcBasis::ObservationPoly(d) => Err(LabError::invalid(format!(
                "observation-poly degree must be in 1..=6, got {d}"
            ))),
            LsmcBasis::FilteredPoly(d) if (1..=2).contains(&d) => Ok(()),
            LsmcBasis::FilteredPoly(d) => Err(LabError::invalid(format!(
                "filtered-poly degree must be 1 or 2, got {d}"
            ))),
        }
    }
}

/// Output of the backward pass.
#[derive(Debug, Clone)]
pub struct LsmcSolution {
    /// y(0) with its Monte Carlo standard error.
    pub initial_wealth: Estimate,
    /// Mean of the rolled-back wealth at every node (diagnostic).
    pub wealth_node_means: Vec<f64>,
    /// Fitted volatility paths, one per risk leg, aligned with
    /// [`LsmcSolution::leg_blocks`]; the terminal node is left at zero.
    pub volatility: Vec<RealPath>,
    /// Stock-block index of each volatility leg.
    pub leg_blocks: Vec<usize>,
    /// Worst condition number seen across all regressions.
    pub max_condition_number: f64,
    /// Total singular directions dropped across all regressions.
    pub dropped_directions: usize,
}

fn monomial_count(vars: usize, degree: usize) -> usize {
    match degree {
        1 => 1 + vars,
        _ => 1 + vars + vars * (vars + 1) / 2,
    }
}

fn basis_width(market: &SimulatedMarket, basis: &LsmcBasis) -> usize {
    let dims = [
        market.player(Player::One).observations().dim(),
        market.player(Player::Two).observations().dim(),
    ];
    match *basis {
        LsmcBasis::ConstantOnly => 1,
        LsmcBasis::ObservationPoly(d) => 1 + d * (dims[0] + dims[1]),
        LsmcBasis::FilteredPoly(d) => {
            1 + dims
                .iter()
                .map(|&n| d * n + monomial_count(2 * n, d))
                .sum::<usize>()
        }
    }
}

fn fill_features(
    market: &SimulatedMarket,
    strategies: [&StrategyProcess; 2],
    basis: &LsmcBasis,
    node: usize,
    out: &mut Array2<f64>,
) {
    let n_paths = market.n_paths();
    let k = out.ncols();
    for p in 0..n_paths {
        out[[p, 0]] = 1.0;
        let mut col = 1;
        match *basis {
            LsmcBasis::ConstantOnly => {}
            LsmcBasis::ObservationPoly(d) => {
                for player in [Player::One, Player::Two] {
                    let obs = market.player(player).observations();
                    for c in 0..obs.dim() {
                        let x = obs.at(p, node, c);
                        let mut pow = 1.0;
                        for _ in 0..d {
                            pow *= x;
                            out[[p, col]] = pow;
                            col += 1;
                        }
                    }
                }
            }
            LsmcBasis::FilteredPoly(d) => {
                for player in [Player::One, Player::Two] {
                    let idx = player.index();
                    let column = market.player(player);
                    let obs = column.observations();
                    for c in 0..obs.dim() {
                        let x = obs.at(p, node, c);
                        let mut pow = 1.0;
                        for _ in 0..d {
                            pow *= x;
                            out[[p, col]] = pow;
                            col += 1;
                        }
                    }
                    // Current injection rate times monomials in the block
                    // state: filtered price of risk, then realized price of
                    // risk (affine images of the filtered and true drifts).
                    let rate = strategies[idx].values().at(p, node, 0);
                    let bhat = column.filter().price_of_risk();
                    let brea = &market.player_risk[idx];
                    let mut vars = Vec::with_capacity(2 * obs.dim());
                    for c in 0..bhat.dim() {
                        vars.push(bhat.at(p, node, c));
                    }
                    for c in 0..brea.dim() {
                        vars.push(brea.at(p, node, c));
                    }
                    out[[p, col]] = rate;
                    col += 1;
                    for &v in &vars {
                        out[[p, col]] = rate * v;
                        col += 1;
                    }
                    if d >= 2 {
                        for a in 0..vars.len() {
                            for b in a..vars.len() {
                                out[[p, col]] = rate * vars[a] * vars[b];
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        debug_assert_eq!(col, k, "feature fill must cover the declared width");
    }
}

/// Solve the wealth equation backward under the given strategies.
pub fn lsmc_bsde_solve(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
    basis: &LsmcBasis,
) -> Result<LsmcSolution> {
    basis.validate()?;
    check_strategy(market, i1, Player::One)?;
    check_strategy(market, i2, Player::Two)?;
    let grid = *market.grid();
    let n_paths = market.n_paths();
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let k = basis_width(market, basis);
    if n_paths < k {
        return Err(LabError::invalid(format!(
            "lsmc needs at least as many paths as features ({n_paths} < {k})"
        )));
    }
    let ShortRate::Constant(r) = market.scenario().rate();
    let legs = market.risk_legs();
    let leg_blocks: Vec<usize> = legs.iter().map(|(block, _, _)| *block).collect();

    let mut ybar = market.terminal_claim_samples();
    let mut volatility: Vec<RealPath> = legs
        .iter()
        .map(|(_, b, _)| RealPath::zeros(n_paths, &grid, b.dim()))
        .collect();
    let mut wealth_node_means = vec![0.0; grid.n_nodes()];
    wealth_node_means[n_steps] = stats::mean(&ybar);
    let mut features = Array2::zeros((n_paths, k));
    let mut coupling = vec![0.0; n_paths];
    let mut max_condition_number: f64 = 1.0;
    let mut dropped_directions = 0usize;

    for j in (0..n_steps).rev() {
        fill_features(market, [i1, i2], basis, j, &mut features);
        let fit_y = cross_section_fit(features.view(), &[&ybar], RankPolicy::DropDegenerate)?;
        let yhat = &fit_y.fitted[0];

        let mut z_targets: Vec<Vec<f64>> = Vec::new();
        for (_, b, w) in &legs {
            let dw = w.view();
            for c in 0..b.dim() {
                z_targets.push(
                    (0..n_paths)
                        .map(|p| (ybar[p] - yhat[p]) * dw[[p, j, c]] / dt)
                        .collect(),
                );
            }
        }
        let refs: Vec<&[f64]> = z_targets.iter().map(Vec::as_slice).collect();
        let fit_z = cross_section_fit(features.view(), &refs, RankPolicy::DropDegenerate)?;
        max_condition_number = max_condition_number
            .max(fit_y.condition_number)
            .max(fit_z.condition_number);
        dropped_directions += fit_y.dropped_directions + fit_z.dropped_directions;

        coupling.iter_mut().for_each(|c| *c = 0.0);
        let mut col = 0;
        for (leg, (_, b, _)) in legs.iter().enumerate() {
            for c in 0..b.dim() {
                let fitted = &fit_z.fitted[col];
                let store = volatility[leg].values_mut();
                for p in 0..n_paths {
                    store[[p, j, c]] = fitted[p];
                    coupling[p] += b.at(p, j, c) * fitted[p];
                }
                col += 1;
            }
        }
        let v1 = i1.values();
        let v2 = i2.values();
        for p in 0..n_paths {
            ybar[p] -= dt * (r * yhat[p] + coupling[p] + v1.at(p, j, 0) + v2.at(p, j, 0));
        }
        wealth_node_means[j] = stats::mean(&ybar);
    }

    Ok(LsmcSolution {
        initial_wealth: Estimate::from_samples(&ybar),
        wealth_node_means,
        volatility,
        leg_blocks,
        max_condition_number,
        dropped_directions,
    })
}
