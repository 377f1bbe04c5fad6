//! Market simulation and cost layer for the two-manager injection game.
//!
//! Two fund managers inject capital into a shared wealth account. The stock
//! universe is split into three blocks: a common block 0 whose drift is
//! deterministic, and blocks 1 and 2 whose Ornstein-Uhlenbeck drifts are
//! observed only through the stock prices of the respective manager. Each
//! manager runs the Kalman-Bucy filter on their own block and injects
//! capital at a rate I_i(t) >= 0.
//!
//! The market deflator is
//!     D(t) = exp(-int_0^t r ds) * prod_k E(-b^k . W^k)(t),
//! with b^k = sigma_k^{-1} (mu^k - r 1) the block price of risk. Manager i's
//! adjoint is p_i = -M_i D and its filtered projection uses only the block-i
//! innovation process. The candidate control is the pointwise minimizer of
//! the injection Hamiltonian:
//!     Ibar_i(t) = -(1/2) e^{beta t} L_i^{-1} phat_i(t),
//! which is strictly positive because phat_i < 0. Costs are
//!     J_i = E int_0^T L_i e^{-beta t} I_i(t)^2 dt + M_i y(0),
//! where y(0) = E[ D(T) xi - int_0^T D (I_1 + I_2) dt ] is the initial
//! wealth that finances the terminal claim xi under the injections.
//!
//! All estimators here are plain (or likelihood-ratio-weighted) Monte Carlo
//! means over a shared path bundle, so common-random-number comparisons of
//! two strategies are exact path by path.

use crate::error::{LabError, Result};
use crate::ou_filter::{
    filtered_adjoint, initial_drift_values, price_of_risk_path, run_kalman_bucy, simulate_ou_drift,
    solve_riccati, synthesize_observations, FilterOutput, InitialLaw, ObservationModel,
    OuBlockParams, ShortRate,
};
use crate::stats::{self, Estimate};
use crate::stochastic_core::{
    sample_bundle_with_seeds, stochastic_exponential, BundleSeeds, ExponentSign, Increments,
    PathBundle, RealPath, TimeGrid, STREAM_PRIOR,
};
use ndarray::Array3;

pub mod lsmc;

/// One of the two fund managers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    One,
    Two,
}

impl Player {
    /// Zero-based index (player 1 -> 0).
    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    /// The stock block this player observes (player 1 -> block 1).
    pub fn block(self) -> usize {
        self.index() + 1
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Player::One => "player 1",
            Player::Two => "player 2",
        }
    }
}

/// Cost weights for both managers: running weights L_i > 0, wealth weights
/// M_i > 0 and the common running discount rate beta >= 0.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    l: [f64; 2],
    m: [f64; 2],
    beta: f64,
}

impl CostParams {
    pub fn new(l1: f64, l2: f64, m1: f64, m2: f64, beta: f64) -> Result<CostParams> {
        for (name, v) in [("L1", l1), ("L2", l2), ("M1", m1), ("M2", m2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LabError::invalid(format!(
                    "cost weight {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(LabError::invalid(format!(
                "cost discount rate beta must be nonnegative and finite, got {beta}"
            )));
        }
        Ok(CostParams {
            l: [l1, l2],
            m: [m1, m2],
            beta,
        })
    }

    pub fn l(&self, player: Player) -> f64 {
        self.l[player.index()]
    }

    pub fn m(&self, player: Player) -> f64 {
        self.m[player.index()]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same weights with (L_i, M_i) multiplied by a common factor; the
    /// candidate controls are invariant under this rescaling.
    pub fn scaled(&self, lambda: f64) -> Result<CostParams> {
        CostParams::new(
            lambda * self.l[0],
            lambda * self.l[1],
            lambda * self.m[0],
            lambda * self.m[1],
            self.beta,
        )
    }
}

/// Terminal claim xi financed by the wealth account. Only bounded functional
/// forms are admitted so xi is square integrable by construction.
#[derive(Debug, Clone, Copy)]
pub enum TerminalClaim {
    /// xi = c with c >= 0.
    Constant(f64),
    /// xi = base + scale * tanh(Y^1_0(T) + Y^2_0(T)), a bounded function of
    /// the first component of each manager's terminal observation. Requires
    /// base >= |scale| so the claim stays nonnegative.
    BoundedObservation { base: f64, scale: f64 },
}

impl TerminalClaim {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TerminalClaim::Constant(c) => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(LabError::invalid(format!(
                        "constant terminal claim must be nonnegative and finite, got {c}"
                    )));
                }
            }
            TerminalClaim::BoundedObservation { base, scale } => {
                if !(base.is_finite() && scale.is_finite() && base >= scale.abs()) {
                    return Err(LabError::invalid(format!(
                        "bounded terminal claim needs base >= |scale|, got base {base}, scale {scale}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluate the claim on one path given both managers' observation paths.
    pub fn evaluate(&self, obs1: &RealPath, obs2: &RealPath, path: usize) -> f64 {
        match *self {
            TerminalClaim::Constant(c) => c,
            TerminalClaim::BoundedObservation { base, scale } => {
                let last = obs1.n_nodes() - 1;
                let y = obs1.at(path, last, 0) + obs2.at(path, last, 0);
                base + scale * y.tanh()
            }
        }
    }
}

/// Drift dynamics plus observation map for one stock block.
#[derive(Debug, Clone)]
pub struct MarketBlock {
    params: OuBlockParams,
    obs: ObservationModel,
}

impl MarketBlock {
    pub fn new(params: OuBlockParams, obs: ObservationModel) -> Result<MarketBlock> {
        if params.dim() != obs.dim() {
            return Err(LabError::shape(format!(
                "block drift dimension {} does not match observation dimension {}",
                params.dim(),
                obs.dim()
            )));
        }
        Ok(MarketBlock { params, obs })
    }

    pub fn params(&self) -> &OuBlockParams {
        &self.params
    }

    pub fn obs(&self) -> &ObservationModel {
        &self.obs
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }
}

/// How the initial drift values are drawn when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftInitialLaw {
    /// Start every path at the prior mean (misspecified prior unless the
    /// prior covariance is zero).
    PriorMean,
    /// Draw mu(0) ~ N(m0, P0) so the filter prior matches the data law.
    PriorSample,
}

/// Full description of one simulated game: grid, blocks, costs, claim and
/// Monte Carlo settings.
#[derive(Debug, Clone)]
pub struct GameScenario {
    grid: TimeGrid,
    common: Option<MarketBlock>,
    players: [MarketBlock; 2],
    cost: CostParams,
    claim: TerminalClaim,
    n_paths: usize,
    seed: u64,
    initial_law: DriftInitialLaw,
}

fn same_rate(a: ShortRate, b: ShortRate) -> bool {
    match (a, b) {
        (ShortRate::Constant(x), ShortRate::Constant(y)) => x == y,
    }
}

impl GameScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: TimeGrid,
        common: Option<MarketBlock>,
        players: [MarketBlock; 2],
        cost: CostParams,
        claim: TerminalClaim,
        n_paths: usize,
        seed: u64,
        initial_law: DriftInitialLaw,
    ) -> Result<GameScenario> {
        if n_paths == 0 {
            return Err(LabError::invalid("n_paths must be positive"));
        }
        claim.validate()?;
        let rate = players[0].obs().rate();
        if !same_rate(rate, players[1].obs().rate()) {
            return Err(LabError::invalid(
                "both player blocks must share one short rate",
            ));
        }
        if let Some(blk) = &common {
            if !same_rate(rate, blk.obs().rate()) {
                return Err(LabError::invalid(
                    "the common block must share the players' short rate",
                ));
            }
            // The common block carries no drift-noise stream and no prior
            // stream, so it must be fully deterministic.
            if blk.params().zeta().iter().any(|&z| z != 0.0) {
                return Err(LabError::invalid(
                    "the common block drift must be deterministic (zeta = 0)",
                ));
            }
            if blk.params().prior_cov().iter().any(|&p| p != 0.0) {
                return Err(LabError::invalid(
                    "the common block drift must be deterministic (prior covariance = 0)",
                ));
            }
        }
        Ok(GameScenario {
            grid,
            common,
            players,
            cost,
            claim,
            n_paths,
            seed,
            initial_law,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn common(&self) -> Option<&MarketBlock> {
        self.common.as_ref()
    }

    pub fn player_block(&self, player: Player) -> &MarketBlock {
        &self.players[player.index()]
    }

    pub fn cost(&self) -> &CostParams {
        &self.cost
    }

    pub fn claim(&self) -> &TerminalClaim {
        &self.claim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_law(&self) -> DriftInitialLaw {
        self.initial_law
    }

    pub fn rate(&self) -> ShortRate {
        self.players[0].obs().rate()
    }

    pub fn with_seed(&self, seed: u64) -> GameScenario {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    pub fn with_n_paths(&self, n_paths: usize) -> GameScenario {
        let mut s = self.clone();
        s.n_paths = n_paths.max(1);
        s
    }

    pub fn with_cost(&self, cost: CostParams) -> GameScenario {
        let mut s = self.clone();
        s.cost = cost;
        s
    }
}

/// Everything one manager sees and does: own observations, filter output,
/// filtered adjoint and the closed-form candidate control.
#[derive(Debug, Clone)]
pub struct PlayerColumn {
    observations: RealPath,
    filter: FilterOutput,
    filtered_adjoint: RealPath,
    candidate: StrategyProcess,
}

impl PlayerColumn {
    pub fn observations(&self) -> &RealPath {
        &self.observations
    }

    pub fn filter(&self) -> &FilterOutput {
        &self.filter
    }

    pub fn filtered_adjoint(&self) -> &RealPath {
        &self.filtered_adjoint
    }

    pub fn candidate(&self) -> &StrategyProcess {
        &self.candidate
    }
}

/// A simulated market: the noise bundle, true drifts and risks per block,
/// both managers' filtered columns, and the deflator.
#[derive(Debug, Clone)]
pub struct SimulatedMarket {
    scenario: GameScenario,
    bundle: PathBundle,
    common_risk: Option<RealPath>,
    player_risk: [RealPath; 2],
    player_drift: [RealPath; 2],
    players: [PlayerColumn; 2],
    deflator: RealPath,
    discount: Vec<f64>,
}

impl SimulatedMarket {
    pub fn scenario(&self) -> &GameScenario {
        &self.scenario
    }

    pub fn grid(&self) -> &TimeGrid {
        self.scenario.grid()
    }

    pub fn n_paths(&self) -> usize {
        self.scenario.n_paths()
    }

    pub fn bundle(&self) -> &PathBundle {
        &self.bundle
    }

    pub fn player(&self, player: Player) -> &PlayerColumn {
        &self.players[player.index()]
    }

    /// The true (unobserved) drift of one manager's block, for filter
    /// consistency diagnostics.
    pub fn true_drift(&self, player: Player) -> &RealPath {
        &self.player_drift[player.index()]
    }

    pub fn deflator_path(&self) -> &RealPath {
        &self.deflator
    }

    /// Nodewise values of exp(-int_0^t r ds).
    pub fn discount_nodes(&self) -> &[f64] {
        &self.discount
    }

    /// True price of risk per present block, paired with the block's stock
    /// noise: `(block index, b^k, W^k increments)`.
    pub fn risk_legs(&self) -> Vec<(usize, &RealPath, &Increments)> {
        let mut legs = Vec::new();
        if let Some(b0) = &self.common_risk {
            legs.push((0usize, b0, self.bundle.stock_noise(0)));
        }
        legs.push((1usize, &self.player_risk[0], self.bundle.stock_noise(1)));
        legs.push((2usize, &self.player_risk[1], self.bundle.stock_noise(2)));
        legs
    }

    /// Terminal claim evaluated on every path.
    pub fn terminal_claim_samples(&self) -> Vec<f64> {
        (0..self.n_paths())
            .map(|p| {
                self.scenario.claim().evaluate(
                    &self.players[0].observations,
                    &self.players[1].observations,
                    p,
                )
            })
            .collect()
    }
}

/// Simulate the market with every noise stream seeded from the scenario seed.
pub fn simulate_market(scenario: &GameScenario) -> Result<SimulatedMarket> {
    simulate_market_with_seeds(scenario, BundleSeeds::uniform(scenario.seed()))
}

/// Simulate with explicit per-stream seeds. The adaptedness audit uses this
/// with [`BundleSeeds::reseed_foreign`] to rerun the world with one player's
/// noise kept and everything else resampled.
pub fn simulate_market_with_seeds(
    scenario: &GameScenario,
    seeds: BundleSeeds,
) -> Result<SimulatedMarket> {
    let grid = *scenario.grid();
    let n_paths = scenario.n_paths();
    let dims = (
        scenario.common().map_or(0, MarketBlock::dim),
        scenario.player_block(Player::One).dim(),
        scenario.player_block(Player::Two).dim(),
    );
    let bundle = sample_bundle_with_seeds(&grid, dims, n_paths, seeds)?;
    let rate = scenario.rate();
    let discount: Vec<f64> = rate
        .integral_nodes(&grid)
        .into_iter()
        .map(|x| (-x).exp())
        .collect();

    let common_risk = match scenario.common() {
        Some(blk) => {
            let init = initial_drift_values(blk.params(), InitialLaw::PriorMean, n_paths)?;
            let noise = Increments::zeros(n_paths, &grid, blk.params().noise_dim());
            let mu = simulate_ou_drift(blk.params(), &noise, init.view(), &grid)?;
            Some(price_of_risk_path(&mu, blk.obs(), &grid)?)
        }
        None => None,
    };

    let mut player_risk = Vec::with_capacity(2);
    let mut player_drift = Vec::with_capacity(2);
    let mut players = Vec::with_capacity(2);
    for player in [Player::One, Player::Two] {
        let idx = player.index();
        let blk = scenario.player_block(player);
        let law = match scenario.initial_law() {
            DriftInitialLaw::PriorMean => InitialLaw::PriorMean,
            DriftInitialLaw::PriorSample => InitialLaw::PriorSample {
                seed: bundle.seeds().prior[idx],
                stream: STREAM_PRIOR[idx],
            },
        };
        let init = initial_drift_values(blk.params(), law, n_paths)?;
        let mu = simulate_ou_drift(
            blk.params(),
            bundle.drift_noise(player.block()),
            init.view(),
            &grid,
        )?;
        let observations =
            synthesize_observations(&mu, blk.obs(), bundle.stock_noise(player.block()), &grid)?;
        let risk = price_of_risk_path(&mu, blk.obs(), &grid)?;
        let error_cov = solve_riccati(blk.params(), blk.obs(), &grid)?;
        let filter = run_kalman_bucy(&observations, blk.params(), blk.obs(), &error_cov, &grid)?;
        let adjoint = filtered_adjoint(
            filter.price_of_risk(),
            filter.innovations(),
            scenario.cost().m(player),
            rate,
            &grid,
        )?;
        let candidate = candidate_strategy(
            player,
            &adjoint,
            scenario.cost().l(player),
            scenario.cost().beta(),
            &grid,
        )?;
        player_risk.push(risk);
        player_drift.push(mu);
        players.push(PlayerColumn {
            observations,
            filter,
            filtered_adjoint: adjoint,
            candidate,
        });
    }
    let player_risk: [RealPath; 2] = match player_risk.try_into() {
        Ok(arr) => arr,
        Err(_) => unreachable!("exactly two players simulated"),
    };
    let player_drift: [RealPath; 2] = match player_drift.try_into() {
        Ok(arr) => arr,
        Err(_) => unreachable!("exactly two players simulated"),
    };
    let players: [PlayerColumn; 2] = match players.try_into() {
        Ok(arr) => arr,
        Err(_) => unreachable!("exactly two players simulated"),
    };

    let mut legs: Vec<(&RealPath, &Increments)> = Vec::new();
    if let Some(b0) = &common_risk {
        legs.push((b0, bundle.stock_noise(0)));
    }
    legs.push((&player_risk[0], bundle.stock_noise(1)));
    legs.push((&player_risk[1], bundle.stock_noise(2)));
    let deflator_path = deflator(rate, &legs, &grid)?;

    Ok(SimulatedMarket {
        scenario: scenario.clone(),
        bundle,
        common_risk,
        player_risk,
        player_drift,
        players,
        deflator: deflator_path,
        discount,
    })
}

/// Market deflator D(t) = exp(-int_0^t r ds) * prod_k E(-b^k . W^k)(t).
///
/// Each leg pairs a block's price-of-risk path with that block's Brownian
/// increments; legs for empty blocks are simply omitted. D(0) = 1 and the
/// path is strictly positive.
pub fn deflator(
    rate: ShortRate,
    legs: &[(&RealPath, &Increments)],
    grid: &TimeGrid,
) -> Result<RealPath> {
    let n_paths = match legs.first() {
        Some((b, _)) => b.n_paths(),
        None => {
            return Err(LabError::invalid(
                "deflator needs at least one price-of-risk leg",
            ))
        }
    };
    let discount: Vec<f64> = rate
        .integral_nodes(grid)
        .into_iter()
        .map(|x| (-x).exp())
        .collect();
    let mut values = Array3::from_elem((n_paths, grid.n_nodes(), 1), 1.0);
    for (risk, noise) in legs {
        let factor = stochastic_exponential(risk, noise, ExponentSign::Minus, grid)?;
        if factor.n_paths() != n_paths {
            return Err(LabError::shape(
                "deflator legs disagree on the number of paths",
            ));
        }
        for p in 0..n_paths {
            for k in 0..grid.n_nodes() {
                values[[p, k, 0]] *= factor.at(p, k, 0);
            }
        }
    }
    for p in 0..n_paths {
        for (k, d) in discount.iter().enumerate() {
            values[[p, k, 0]] *= d;
        }
    }
    RealPath::from_array(values, grid)
}

/// Full-information adjoint p_i(t) = -M_i D(t); strictly negative.
pub fn adjoint_p(m_weight: f64, deflator: &RealPath) -> Result<RealPath> {
    if !(m_weight.is_finite() && m_weight > 0.0) {
        return Err(LabError::invalid(format!(
            "wealth weight M must be positive and finite, got {m_weight}"
        )));
    }
    if deflator.dim() != 1 {
        return Err(LabError::shape("deflator must be scalar valued"));
    }
    let mut values = deflator.values().clone();
    values.mapv_inplace(|d| -m_weight * d);
    RealPath::from_array(values, &TimeGrid::new(1.0, deflator.n_nodes() - 1)?)
}

/// How a strategy path was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// The closed-form candidate built from the filtered adjoint.
    ClosedFormCandidate,
    /// Any tabulated rule (including perturbed candidates).
    TabulatedRule,
}

/// A nonnegative injection-rate path for one player. Values below zero are
/// clamped to zero on construction and the clamp count is kept for audits:
/// a nonzero count means the requested rule left the admissible set.
#[derive(Debug, Clone)]
pub struct StrategyProcess {
    player: Player,
    kind: StrategyKind,
    values: RealPath,
    clamped_nodes: usize,
}

impl StrategyProcess {
    pub fn from_values(player: Player, values: RealPath) -> Result<StrategyProcess> {
        Self::build(player, StrategyKind::TabulatedRule, values)
    }

    fn build(player: Player, kind: StrategyKind, mut values: RealPath) -> Result<StrategyProcess> {
        if values.dim() != 1 {
            return Err(LabError::shape("strategy paths must be scalar valued"));
        }
        let mut clamped = 0usize;
        for v in values.values_mut().iter_mut() {
            if !v.is_finite() {
                return Err(LabError::numerical(
                    "strategy construction",
                    "injection rule produced a non-finite value",
                ));
            }
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        Ok(StrategyProcess {
            player,
            kind,
            values,
            clamped_nodes: clamped,
        })
    }

    pub fn zero(player: Player, n_paths: usize, grid: &TimeGrid) -> StrategyProcess {
        StrategyProcess {
            player,
            kind: StrategyKind::TabulatedRule,
            values: RealPath::zeros(n_paths, grid, 1),
            clamped_nodes: 0,
        }
    }

    pub fn constant(
        player: Player,
        level: f64,
        n_paths: usize,
        grid: &TimeGrid,
    ) -> Result<StrategyProcess> {
        if !level.is_finite() {
            return Err(LabError::invalid("constant injection level must be finite"));
        }
        let values =
            RealPath::from_array(Array3::from_elem((n_paths, grid.n_nodes(), 1), level), grid)?;
        Self::build(player, StrategyKind::TabulatedRule, values)
    }

    /// The strategy `self + epsilon * direction`, clamped at zero.
    pub fn perturbed(&self, direction: &RealPath, epsilon: f64) -> Result<StrategyProcess> {
        if direction.n_paths() != self.values.n_paths()
            || direction.n_nodes() != self.values.n_nodes()
            || direction.dim() != 1
        {
            return Err(LabError::shape(
                "perturbation direction must match the strategy path shape",
            ));
        }
        if !epsilon.is_finite() {
            return Err(LabError::invalid("perturbation size must be finite"));
        }
        let mut values = self.values.values().clone();
        let dir = direction.values();
        ndarray::Zip::from(&mut values)
            .and(dir)
            .for_each(|v, &d| *v += epsilon * d);
        let grid_proxy = TimeGrid::new(1.0, self.values.n_nodes() - 1)?;
        let path = RealPath::from_array(values, &grid_proxy)?;
        Self::build(self.player, StrategyKind::TabulatedRule, path)
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn values(&self) -> &RealPath {
        &self.values
    }

    /// Number of (path, node) entries that had to be clamped to zero.
    pub fn clamped_nodes(&self) -> usize {
        self.clamped_nodes
    }
}

/// Closed-form candidate control
/// Ibar_i(t) = -(1/2) e^{beta t} L_i^{-1} phat_i(t).
///
/// With phat_i < 0 the candidate is strictly positive, so the clamp counter
/// of the returned strategy is zero.
pub fn candidate_strategy(
    player: Player,
    filtered_adjoint: &RealPath,
    l_weight: f64,
    beta: f64,
    grid: &TimeGrid,
) -> Result<StrategyProcess> {
    if !(l_weight.is_finite() && l_weight > 0.0) {
        return Err(LabError::invalid(format!(
            "running cost weight L must be positive and finite, got {l_weight}"
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(LabError::invalid(format!(
            "cost discount rate beta must be nonnegative and finite, got {beta}"
        )));
    }
    if filtered_adjoint.dim() != 1 {
        return Err(LabError::shape("filtered adjoint must be scalar valued"));
    }
    if filtered_adjoint.n_nodes() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "filtered adjoint has {} nodes, grid expects {}",
            filtered_adjoint.n_nodes(),
            grid.n_nodes()
        )));
    }
    let n_paths = filtered_adjoint.n_paths();
    let mut values = Array3::zeros((n_paths, grid.n_nodes(), 1));
    let growth: Vec<f64> = (0..grid.n_nodes())
        .map(|k| (beta * grid.node(k)).exp())
        .collect();
    for p in 0..n_paths {
        for (k, g) in growth.iter().enumerate() {
            values[[p, k, 0]] = -0.5 * g * filtered_adjoint.at(p, k, 0) / l_weight;
        }
    }
    let path = RealPath::from_array(values, grid)?;
    StrategyProcess::build(player, StrategyKind::ClosedFormCandidate, path)
}

fn check_strategy(
    market: &SimulatedMarket,
    strategy: &StrategyProcess,
    expected: Player,
) -> Result<()> {
    if strategy.player() != expected {
        return Err(LabError::invalid(format!(
            "expected a strategy for {}, got one for {}",
            expected.label(),
            strategy.player().label()
        )));
    }
    if strategy.values().n_paths() != market.n_paths()
        || strategy.values().n_nodes() != market.grid().n_nodes()
    {
        return Err(LabError::shape(format!(
            "strategy shape ({} paths, {} nodes) does not match the market ({} paths, {} nodes)",
            strategy.values().n_paths(),
            strategy.values().n_nodes(),
            market.n_paths(),
            market.grid().n_nodes()
        )));
    }
    Ok(())
}

/// Per-path samples of the initial wealth
/// D(T) xi - int_0^T D (I_1 + I_2) dt (left-endpoint sum).
pub fn wealth_samples(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<Vec<f64>> {
    check_strategy(market, i1, Player::One)?;
    check_strategy(market, i2, Player::Two)?;
    let grid = market.grid();
    let dt = grid.dt();
    let n_steps = grid.n_steps();
    let last = grid.n_nodes() - 1;
    let d = market.deflator_path();
    let claim = market.terminal_claim_samples();
    let v1 = i1.values();
    let v2 = i2.values();
    let samples = (0..market.n_paths())
        .map(|p| {
            let mut injections = 0.0;
            for j in 0..n_steps {
                injections += d.at(p, j, 0) * (v1.at(p, j, 0) + v2.at(p, j, 0)) * dt;
            }
            d.at(p, last, 0) * claim[p] - injections
        })
        .collect();
    Ok(samples)
}

/// Monte Carlo estimate of y(0) = E[D(T) xi - int_0^T D (I_1 + I_2) dt].
pub fn wealth_y0(
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&wealth_samples(market, i1, i2)?))
}

/// Per-path samples of the running cost int_0^T L_i e^{-beta t} I_i^2 dt.
pub fn running_cost_samples(
    market: &SimulatedMarket,
    player: Player,
    strategy: &StrategyProcess,
) -> Result<Vec<f64>> {
    check_strategy(market, strategy, player)?;
    let grid = market.grid();
    let dt = grid.dt();
    let n_steps = grid.n_steps();
    let l = market.scenario().cost().l(player);
    let beta = market.scenario().cost().beta();
    let weight: Vec<f64> = (0..n_steps)
        .map(|j| l * (-beta * grid.node(j)).exp() * dt)
        .collect();
    let v = strategy.values();
    let samples = (0..market.n_paths())
        .map(|p| {
            let mut acc = 0.0;
            for (j, w) in weight.iter().enumerate() {
                let inj = v.at(p, j, 0);
                acc += w * inj * inj;
            }
            acc
        })
        .collect();
    Ok(samples)
}

/// Per-path cost samples J_i = running_i + M_i * (wealth sample). The mean of
/// these samples is the cost functional; differences of two strategies'
/// samples on the same market are exact common-random-number comparisons.
pub fn cost_samples(
    market: &SimulatedMarket,
    player: Player,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<Vec<f64>> {
    let own = match player {
        Player::One => i1,
        Player::Two => i2,
    };
    let running = running_cost_samples(market, player, own)?;
    let wealth = wealth_samples(market, i1, i2)?;
    let m = market.scenario().cost().m(player);
    Ok(running
        .iter()
        .zip(&wealth)
        .map(|(r, w)| r + m * w)
        .collect())
}

/// A cost estimate with its additive decomposition.
#[derive(Debug, Clone, Copy)]
pub struct CostEstimate {
    /// J_i with Monte Carlo standard error.
    pub total: Estimate,
    /// Mean of the running part E int L_i e^{-beta t} I_i^2 dt.
    pub running_part: f64,
    /// M_i times the estimated initial wealth y(0).
    pub wealth_part: f64,
}

/// J_i = E int_0^T L_i e^{-beta t} I_i(t)^2 dt + M_i y(0).
pub fn cost_functional(
    market: &SimulatedMarket,
    player: Player,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<CostEstimate> {
    let own = match player {
        Player::One => i1,
        Player::Two => i2,
    };
    let running = running_cost_samples(market, player, own)?;
    let wealth = wealth_samples(market, i1, i2)?;
    let m = market.scenario().cost().m(player);
    let combined: Vec<f64> = running
        .iter()
        .zip(&wealth)
        .map(|(r, w)| r + m * w)
        .collect();
    Ok(CostEstimate {
        total: Estimate::from_samples(&combined),
        running_part: stats::mean(&running),
        wealth_part: m * stats::mean(&wealth),
    })
}

/// Mean of int_0^T L_i e^{-beta t} v(t)^2 dt over paths: the exact quadratic
/// coefficient of the cost in a deviation I_i -> I_i + eps v.
pub fn deviation_quadratic_coefficient(
    market: &SimulatedMarket,
    player: Player,
    direction: &RealPath,
) -> Result<Estimate> {
    if direction.n_paths() != market.n_paths()
        || direction.n_nodes() != market.grid().n_nodes()
        || direction.dim() != 1
    {
        return Err(LabError::shape(
            "deviation direction must be a scalar path matching the market",
        ));
    }
    let grid = market.grid();
    let dt = grid.dt();
    let l = market.scenario().cost().l(player);
    let beta = market.scenario().cost().beta();
    let weight: Vec<f64> = (0..grid.n_steps())
        .map(|j| l * (-beta * grid.node(j)).exp() * dt)
        .collect();
    let samples: Vec<f64> = (0..market.n_paths())
        .map(|p| {
            let mut acc = 0.0;
            for (j, w) in weight.iter().enumerate() {
                let v = direction.at(p, j, 0);
                acc += w * v * v;
            }
            acc
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// Likelihood-ratio-weighted cost estimate
/// J = E[ int_0^T Z(t) l(t) dt + Z(T) Phi ] + gamma,
/// where `weight` is the Girsanov weight path Z under the reference measure,
/// `running` holds the per-node running cost samples l(t), `terminal` the
/// per-path terminal cost Phi, and `gamma` a deterministic cost of the
/// initial wealth (already evaluated).
pub fn girsanov_cost(
    weight: &RealPath,
    running: &RealPath,
    terminal: &[f64],
    gamma: f64,
    grid: &TimeGrid,
) -> Result<Estimate> {
    if weight.dim() != 1 || running.dim() != 1 {
        return Err(LabError::shape(
            "girsanov cost expects scalar weight and running-cost paths",
        ));
    }
    if weight.n_nodes() != grid.n_nodes() || running.n_nodes() != grid.n_nodes() {
        return Err(LabError::shape(format!(
            "girsanov cost paths must have {} nodes",
            grid.n_nodes()
        )));
    }
    let n_paths = weight.n_paths();
    if running.n_paths() != n_paths || terminal.len() != n_paths {
        return Err(LabError::shape(
            "girsanov cost inputs disagree on the number of paths",
        ));
    }
    if !gamma.is_finite() {
        return Err(LabError::invalid("gamma must be finite"));
    }
    let dt = grid.dt();
    let last = grid.n_nodes() - 1;
    let samples: Vec<f64> = (0..n_paths)
        .map(|p| {
            let mut acc = gamma;
            for j in 0..grid.n_steps() {
                acc += weight.at(p, j, 0) * running.at(p, j, 0) * dt;
            }
            acc + weight.at(p, last, 0) * terminal[p]
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// Injection-game Hamiltonian for one manager, evaluated pointwise:
/// H_i = (r y + sum_k b^k . z^k + I_1 + I_2) p_i + L_i e^{-beta t} I_i^2,
/// where `injection_own` is this manager's rate (the one that is penalized)
/// and `injection_other` the opponent's.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_example(
    y: f64,
    z: &[&[f64]],
    injection_own: f64,
    injection_other: f64,
    adjoint: f64,
    r: f64,
    risk: &[&[f64]],
    l_own: f64,
    beta: f64,
    t: f64,
) -> Result<f64> {
    if z.len() != risk.len() {
        return Err(LabError::shape(format!(
            "hamiltonian has {} volatility blocks but {} risk blocks",
            z.len(),
            risk.len()
        )));
    }
    let mut coupling = 0.0;
    for (zb, bb) in z.iter().zip(risk) {
        if zb.len() != bb.len() {
            return Err(LabError::shape("hamiltonian block dimensions do not match"));
        }
        for (zv, bv) in zb.iter().zip(*bb) {
            coupling += zv * bv;
        }
    }
    Ok(
        (r * y + coupling + injection_own + injection_other) * adjoint
            + l_own * (-beta * t).exp() * injection_own * injection_own,
    )
}

/// Partial derivative of [`hamiltonian_example`] in the own injection rate:
/// p_i + 2 L_i e^{-beta t} I_i. Zero exactly at the candidate rate.
pub fn hamiltonian_injection_gradient(
    adjoint: f64,
    l_own: f64,
    beta: f64,
    t: f64,
    injection_own: f64,
) -> f64 {
    adjoint + 2.0 * l_own * (-beta * t).exp() * injection_own
}

/// Pointwise coefficients of the general partially observed Hamiltonian.
/// Scalar state with one value per observation channel; the defaults are all
/// zeros so individual terms can be probed in isolation.
#[derive(Debug, Clone, Default)]
pub struct GeneralCoefficients {
    /// State drift b.
    pub state_drift: f64,
    /// State volatility sigma.
    pub state_vol: f64,
    /// Observation volatilities sigma_j, one per channel.
    pub obs_vols: Vec<f64>,
    /// Observation drifts h_j, one per channel.
    pub obs_drifts: Vec<f64>,
    /// Backward driver f.
    pub driver: f64,
    /// Running cost l_i.
    pub running_cost: f64,
}

/// Adjoint values paired with [`GeneralCoefficients`].
#[derive(Debug, Clone, Default)]
pub struct GeneralAdjoints {
    /// Forward adjoint q paired with the state drift.
    pub state_q: f64,
    /// Forward adjoint k paired with the state volatility.
    pub state_k: f64,
    /// Channel adjoints k_j paired with the observation volatilities.
    pub obs_k: Vec<f64>,
    /// Channel adjoints Q_j paired with the observation drifts.
    pub obs_q: Vec<f64>,
    /// Backward adjoint p.
    pub p: f64,
}

/// General Hamiltonian
/// H = b q + sigma k + sum_j (sigma_j k_j + h_j Q_j)
///     - (f - sum_j h_j z_j) p + l,
/// with `obs_z` holding the backward volatility value z_j per channel.
pub fn hamiltonian_general(
    coeff: &GeneralCoefficients,
    adjoint: &GeneralAdjoints,
    obs_z: &[f64],
) -> Result<f64> {
    let channels = coeff.obs_drifts.len();
    if coeff.obs_vols.len() != channels
        || adjoint.obs_k.len() != channels
        || adjoint.obs_q.len() != channels
        || obs_z.len() != channels
    {
        return Err(LabError::shape(
            "general hamiltonian channel lists must have equal length",
        ));
    }
    let mut acc = coeff.state_drift * adjoint.state_q + coeff.state_vol * adjoint.state_k;
    let mut drift_dot_z = 0.0;
    for j in 0..channels {
        acc += coeff.obs_vols[j] * adjoint.obs_k[j] + coeff.obs_drifts[j] * adjoint.obs_q[j];
        drift_dot_z += coeff.obs_drifts[j] * obs_z[j];
    }
    Ok(acc - (coeff.driver - drift_dot_z) * adjoint.p + coeff.running_cost)
}

/// Control gradient of the reduced Hamiltonian,
/// tilde H_v = H_v - q * sum_j sigma_j h_{j,v},
/// where `obs_drift_gradients` holds the control derivative of each
/// channel's observation drift. When no observation drift depends on the
/// control the gradient is unchanged.
pub fn tilde_h_gradient(
    h_gradient: f64,
    state_q: f64,
    obs_vols: &[f64],
    obs_drift_gradients: &[f64],
) -> Result<f64> {
    if obs_vols.len() != obs_drift_gradients.len() {
        return Err(LabError::shape(
            "observation volatility and drift-gradient lists must match",
        ));
    }
    let mut correction = 0.0;
    for (s, h) in obs_vols.iter().zip(obs_drift_gradients) {
        correction += s * h;
    }
    Ok(h_gradient - state_q * correction)
}
