//! Scenario files: the single source of truth a run is derived from.
//!
//! A scenario is a TOML document with the sections
//!
//! ```toml
//! [grid]      # T, n_steps
//! [dims]      # n0, n1, n2 (common block may have n0 = 0)
//! [market]    # r, sigma0/sigma1/sigma2 (row-major matrices)
//! [drift.0]   # theta, delta, zeta, m0, P0 for the common block
//! [drift.1]   # ... manager 1's block
//! [drift.2]   # ... manager 2's block
//! [cost]      # L1, L2, M1, M2, beta
//! [terminal]  # kind = "constant" | "function", value | base/scale
//! [mc]        # n_paths, seed, init = "prior" | "mean", lsmc_basis
//! ```
//!
//! Every field is optional and takes a documented default, so the empty file
//! resolves to the bundled desk-scale scenario. Validation failures name the
//! offending section. The common block carries no drift-noise or prior
//! stream, so when n0 >= 1 its zeta and P0 must be zero, and when n0 = 0 the
//! `sigma0` and `[drift.0]` entries must be absent.

use crate::error::{LabError, Result};
use crate::market_game::lsmc::LsmcBasis;
use crate::market_game::{CostParams, DriftInitialLaw, GameScenario, MarketBlock, TerminalClaim};
use crate::ou_filter::{ObservationModel, OuBlockParams, ShortRate};
use crate::stochastic_core::TimeGrid;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Documented defaults (the bundled desk-scale scenario).
pub mod defaults {
    pub const HORIZON: f64 = 1.0;
    pub const N_STEPS: usize = 128;
    pub const DIMS: [usize; 3] = [1, 1, 1];
    pub const RATE: f64 = 0.03;
    pub const SIGMA_DIAG: f64 = 0.2;
    pub const THETA_DIAG: f64 = 1.0;
    pub const DELTA: f64 = 0.08;
    pub const ZETA_DIAG: f64 = 0.1;
    pub const PRIOR_MEAN: f64 = 0.08;
    pub const PRIOR_COV_DIAG: f64 = 0.005;
    pub const L1: f64 = 1.0;
    pub const L2: f64 = 1.0;
    pub const M1: f64 = 2.0;
    pub const M2: f64 = 3.0;
    pub const BETA: f64 = 0.05;
    pub const CLAIM: f64 = 1.0;
    pub const N_PATHS: usize = 20_000;
    pub const SEED: u64 = 2024;
    pub const INIT: &str = "prior";
    pub const LSMC_BASIS: &str = "filtered-poly-2";
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub n_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub n0: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub r: Option<f64>,
    pub sigma0: Option<Vec<Vec<f64>>>,
    pub sigma1: Option<Vec<Vec<f64>>>,
    pub sigma2: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub theta: Option<Vec<Vec<f64>>>,
    pub delta: Option<Vec<f64>>,
    pub zeta: Option<Vec<Vec<f64>>>,
    pub m0: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    pub p0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSections {
    #[serde(rename = "0")]
    pub block0: Option<DriftSection>,
    #[serde(rename = "1")]
    pub block1: Option<DriftSection>,
    #[serde(rename = "2")]
    pub block2: Option<DriftSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(rename = "L1")]
    pub l1: Option<f64>,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    #[serde(rename = "M1")]
    pub m1: Option<f64>,
    #[serde(rename = "M2")]
    pub m2: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub kind: Option<String>,
    pub value: Option<f64>,
    pub base: Option<f64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<String>,
    pub lsmc_basis: Option<String>,
}

/// The raw scenario document. Every section and field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: Option<GridSection>,
    pub dims: Option<DimsSection>,
    pub market: Option<MarketSection>,
    pub drift: Option<DriftSections>,
    pub cost: Option<CostSection>,
    pub terminal: Option<TerminalSection>,
    pub mc: Option<McSection>,
}

/// A fully resolved scenario: the simulation inputs plus run options that
/// travel with the file rather than the command line.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub game: GameScenario,
    pub lsmc_basis: LsmcBasis,
    /// The document with every default filled in, for run manifests.
    pub view: ScenarioFile,
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile> {
    toml::from_str(text)
        .map_err(|e| LabError::scenario("file", e.to_string().trim().replace('\n', " ")))
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text)
}

fn to_matrix(section: &str, field: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(LabError::scenario(
            section,
            format!(
                "{field} must be a {n}x{n} row-major matrix, got {} rows of lengths {:?}",
                rows.len(),
                rows.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn to_vector(section: &str, field: &str, values: &[f64], n: usize) -> Result<DVector<f64>> {
    if values.len() != n {
        return Err(LabError::scenario(
            section,
            format!("{field} must have length {n}, got {}", values.len()),
        ));
    }
    Ok(DVector::from_row_slice(values))
}

/// Rewrap a library validation error so the diagnostic names the section.
fn in_section(section: &str) -> impl Fn(LabError) -> LabError + '_ {
    move |e| LabError::scenario(section, e.to_string())
}

struct BlockValues {
    theta: Vec<Vec<f64>>,
    delta: Vec<f64>,
    zeta: Vec<Vec<f64>>,
    m0: Vec<f64>,
    p0: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
}

fn diag(n: usize, v: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { v } else { 0.0 }).collect())
        .collect()
}

fn resolve_block(
    block: usize,
    n: usize,
    drift: &DriftSection,
    sigma: &Option<Vec<Vec<f64>>>,
    rate: f64,
) -> Result<(MarketBlock, BlockValues)> {
    let drift_section = format!("drift.{block}");
    let market_section = "market";
    // The common block has no drift-noise or prior stream: its defaults are
    // deterministic and its zeta / P0 must stay zero.
    let (zeta_default, p0_default) = if block == 0 {
        (0.0, 0.0)
    } else {
        (defaults::ZETA_DIAG, defaults::PRIOR_COV_DIAG)
    };
    let filled = BlockValues {
        theta: drift
            .theta
            .clone()
            .unwrap_or_else(|| diag(n, defaults::THETA_DIAG)),
        delta: drift
            .delta
            .clone()
            .unwrap_or_else(|| vec![defaults::DELTA; n]),
        zeta: drift.zeta.clone().unwrap_or_else(|| diag(n, zeta_default)),
        m0: drift
            .m0
            .clone()
            .unwrap_or_else(|| vec![defaults::PRIOR_MEAN; n]),
        p0: drift.p0.clone().unwrap_or_else(|| diag(n, p0_default)),
        sigma: sigma
            .clone()
            .unwrap_or_else(|| diag(n, defaults::SIGMA_DIAG)),
    };

    let theta = to_matrix(&drift_section, "theta", &filled.theta, n)?;
    for i in 0..n {
        if !(theta[(i, i)] > 0.0) {
            return Err(LabError::scenario(
                &drift_section,
                format!(
                    "theta must have a positive diagonal (mean reversion), got theta[{i}][{i}] = {}",
                    theta[(i, i)]
                ),
            ));
        }
    }
    let delta = to_vector(&drift_section, "delta", &filled.delta, n)?;
    let zeta = to_matrix(&drift_section, "zeta", &filled.zeta, n)?;
    let m0 = to_vector(&drift_section, "m0", &filled.m0, n)?;
    let p0 = to_matrix(&drift_section, "P0", &filled.p0, n)?;
    if block == 0 {
        if zeta.iter().any(|&z| z != 0.0) {
            return Err(LabError::scenario(
                &drift_section,
                "the common block carries no drift-noise stream, so zeta must be zero",
            ));
        }
        if p0.iter().any(|&p| p != 0.0) {
            return Err(LabError::scenario(
                &drift_section,
                "the common block carries no prior stream, so P0 must be zero",
            ));
        }
    }
    let params =
        OuBlockParams::new(theta, delta, zeta, m0, p0).map_err(in_section(&drift_section))?;
    let sigma_mat = to_matrix(market_section, &format!("sigma{block}"), &filled.sigma, n)?;
    let obs = ObservationModel::new(sigma_mat, ShortRate::Constant(rate))
        .map_err(in_section(market_section))?;
    let market_block = MarketBlock::new(params, obs).map_err(in_section(&drift_section))?;
    Ok((market_block, filled))
}

fn parse_basis(text: &str) -> Result<LsmcBasis> {
    let basis = if text == "constant-only" {
        LsmcBasis::ConstantOnly
    } else if let Some(d) = text.strip_prefix("observation-poly-") {
        LsmcBasis::ObservationPoly(d.parse().map_err(|_| {
            LabError::scenario("mc", format!("cannot parse basis degree in {text:?}"))
        })?)
    } else if let Some(d) = text.strip_prefix("filtered-poly-") {
        LsmcBasis::FilteredPoly(d.parse().map_err(|_| {
            LabError::scenario("mc", format!("cannot parse basis degree in {text:?}"))
        })?)
    } else {
        return Err(LabError::scenario(
            "mc",
            format!(
                "unknown lsmc_basis {text:?}; expected constant-only, observation-poly-N or filtered-poly-N"
            ),
        ));
    };
    basis.validate().map_err(in_section("mc"))?;
    Ok(basis)
}

impl ScenarioFile {
    /// Fill every default and build the simulation inputs.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let grid_section = self.grid.clone().unwrap_or_default();
        let horizon = grid_section.t.unwrap_or(defaults::HORIZON);
        let n_steps = grid_section.n_steps.unwrap_or(defaults::N_STEPS);
        let grid = TimeGrid::new(horizon, n_steps).map_err(in_section("grid"))?;

        let dims_section = self.dims.clone().unwrap_or_default();
        let n0 = dims_section.n0.unwrap_or(defaults::DIMS[0]);
        let n1 = dims_section.n1.unwrap_or(defaults::DIMS[1]);
        let n2 = dims_section.n2.unwrap_or(defaults::DIMS[2]);
        if n1 == 0 || n2 == 0 {
            return Err(LabError::scenario(
                "dims",
                format!("both manager blocks need n1, n2 >= 1, got n1 = {n1}, n2 = {n2}"),
            ));
        }

        let market = self.market.clone().unwrap_or_default();
        let rate = market.r.unwrap_or(defaults::RATE);
        if !rate.is_finite() {
            return Err(LabError::scenario(
                "market",
                format!("r must be finite, got {rate}"),
            ));
        }
        let drift = self.drift.clone().unwrap_or_default();

        let common = if n0 == 0 {
            if market.sigma0.is_some() {
                return Err(LabError::scenario(
                    "market",
                    "sigma0 is present but n0 = 0: drop the common block entries or set n0 >= 1",
                ));
            }
            if drift.block0.is_some() {
                return Err(LabError::scenario(
                    "drift.0",
                    "[drift.0] is present but n0 = 0: drop the common block entries or set n0 >= 1",
                ));
            }
            None
        } else {
            let (block, filled) = resolve_block(
                0,
                n0,
                &drift.block0.clone().unwrap_or_default(),
                &market.sigma0,
                rate,
            )?;
            Some((block, filled))
        };
        let (player1, filled1) = resolve_block(
            1,
            n1,
            &drift.block1.clone().unwrap_or_default(),
            &market.sigma1,
            rate,
        )?;
        let (player2, filled2) = resolve_block(
            2,
            n2,
            &drift.block2.clone().unwrap_or_default(),
            &market.sigma2,
            rate,
        )?;

        let cost_section = self.cost.clone().unwrap_or_default();
        let l1 = cost_section.l1.unwrap_or(defaults::L1);
        let l2 = cost_section.l2.unwrap_or(defaults::L2);
        let m1 = cost_section.m1.unwrap_or(defaults::M1);
        let m2 = cost_section.m2.unwrap_or(defaults::M2);
        let beta = cost_section.beta.unwrap_or(defaults::BETA);
        let cost = CostParams::new(l1, l2, m1, m2, beta).map_err(in_section("cost"))?;

        let terminal = self.terminal.clone().unwrap_or_default();
        let kind = terminal.kind.clone().unwrap_or_else(|| "constant".into());
        let claim = match kind.as_str() {
            "constant" => {
                if terminal.base.is_some() || terminal.scale.is_some() {
                    return Err(LabError::scenario(
                        "terminal",
                        "a constant claim takes only `value`; base/scale belong to kind = \"function\"",
                    ));
                }
                TerminalClaim::Constant(terminal.value.unwrap_or(defaults::CLAIM))
            }
            "function" => {
                if terminal.value.is_some() {
                    return Err(LabError::scenario(
                        "terminal",
                        "a function claim takes base/scale; `value` belongs to kind = \"constant\"",
                    ));
                }
                TerminalClaim::BoundedObservation {
                    base: terminal.base.unwrap_or(1.0),
                    scale: terminal.scale.unwrap_or(0.5),
                }
            }
            other => {
                return Err(LabError::scenario(
                    "terminal",
                    format!("unknown claim kind {other:?}; expected \"constant\" or \"function\""),
                ))
            }
        };
        claim.validate().map_err(in_section("terminal"))?;

        let mc = self.mc.clone().unwrap_or_default();
        let n_paths = mc.n_paths.unwrap_or(defaults::N_PATHS);
        if n_paths == 0 {
            return Err(LabError::scenario("mc", "n_paths must be >= 1"));
        }
        let seed = mc.seed.unwrap_or(defaults::SEED);
        let init_text = mc.init.clone().unwrap_or_else(|| defaults::INIT.into());
        let initial_law = match init_text.as_str() {
            "prior" => DriftInitialLaw::PriorSample,
            "mean" => DriftInitialLaw::PriorMean,
            other => {
                return Err(LabError::scenario(
                    "mc",
                    format!("unknown init {other:?}; expected \"prior\" or \"mean\""),
                ))
            }
        };
        let basis_text = mc
            .lsmc_basis
            .clone()
            .unwrap_or_else(|| defaults::LSMC_BASIS.into());
        let lsmc_basis = parse_basis(&basis_text)?;

        let game = GameScenario::new(
            grid,
            common.as_ref().map(|(b, _)| b.clone()),
            [player1, player2],
            cost,
            claim,
            n_paths,
            seed,
            initial_law,
        )
        .map_err(in_section("scenario"))?;

        let view = ScenarioFile {
            grid: Some(GridSection {
                t: Some(horizon),
                n_steps: Some(n_steps),
            }),
            dims: Some(DimsSection {
                n0: Some(n0),
                n1: Some(n1),
                n2: Some(n2),
            }),
            market: Some(MarketSection {
                r: Some(rate),
                sigma0: common.as_ref().map(|(_, s)| s.sigma.clone()),
                sigma1: Some(filled1.sigma.clone()),
                sigma2: Some(filled2.sigma.clone()),
            }),
            drift: Some(DriftSections {
                block0: common.as_ref().map(|(_, s)| DriftSection {
                    theta: Some(s.theta.clone()),
                    delta: Some(s.delta.clone()),
                    zeta: Some(s.zeta.clone()),
                    m0: Some(s.m0.clone()),
                    p0: Some(s.p0.clone()),
                }),
                block1: Some(DriftSection {
                    theta: Some(filled1.theta),
                    delta: Some(filled1.delta),
                    zeta: Some(filled1.zeta),
                    m0: Some(filled1.m0),
                    p0: Some(filled1.p0),
                }),
                block2: Some(DriftSection {
                    theta: Some(filled2.theta),
                    delta: Some(filled2.delta),
                    zeta: Some(filled2.zeta),
                    m0: Some(filled2.m0),
                    p0: Some(filled2.p0),
                }),
            }),
            cost: Some(CostSection {
                l1: Some(l1),
                l2: Some(l2),
                m1: Some(m1),
                m2: Some(m2),
                beta: Some(beta),
            }),
            terminal: Some(match claim {
                TerminalClaim::Constant(c) => TerminalSection {
                    kind: Some("constant".into()),
                    value: Some(c),
                    base: None,
                    scale: None,
                },
                TerminalClaim::BoundedObservation { base, scale } => TerminalSection {
                    kind: Some("function".into()),
                    value: None,
                    base: Some(base),
                    scale: Some(scale),
                },
            }),
            mc: Some(McSection {
                n_paths: Some(n_paths),
                seed: Some(seed),
                init: Some(init_text),
                lsmc_basis: Some(basis_text),
            }),
        };

        Ok(ResolvedScenario {
            game,
            lsmc_basis,
            view,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_game::Player;

    #[test]
    fn empty_document_resolves_to_the_bundled_defaults() {
        let file = parse_scenario_str("").unwrap();
        let resolved = file.resolve().unwrap();
        let game = &resolved.game;
        assert_eq!(game.grid().horizon(), 1.0);
        assert_eq!(game.grid().n_steps(), 128);
        assert_eq!(game.n_paths(), 20_000);
        assert_eq!(game.seed(), 2024);
        assert!(game.common().is_some());
        assert_eq!(game.player_block(Player::One).dim(), 1);
        assert_eq!(game.cost().m(Player::Two), 3.0);
        assert_eq!(resolved.lsmc_basis, LsmcBasis::FilteredPoly(2));
        // The resolved view has every field filled.
        let view = &resolved.view;
        assert_eq!(view.grid.as_ref().unwrap().n_steps, Some(128));
        assert_eq!(view.market.as_ref().unwrap().sigma1, Some(vec![vec![0.2]]));
        assert_eq!(view.mc.as_ref().unwrap().init.as_deref(), Some("prior"));
    }

    #[test]
    fn explicit_document_round_trips() {
        let text = r#"
            [grid]
            T = 2.0
            n_steps = 64

            [dims]
            n0 = 0
            n1 = 1
            n2 = 1

            [market]
            r = 0.0
            sigma1 = [[0.25]]
            sigma2 = [[0.3]]

            [drift.1]
            theta = [[1.5]]
            delta = [0.1]
            zeta = [[0.2]]
            m0 = [0.1]
            P0 = [[0.01]]

            [cost]
            L1 = 0.5
            L2 = 1.0
            M1 = 4.0
            M2 = 4.0
            beta = 0.0

            [terminal]
            kind = "function"
            base = 1.0
            scale = 0.5

            [mc]
            n_paths = 500
            seed = 7
            init = "mean"
            lsmc_basis = "observation-poly-3"
        "#;
        let resolved = parse_scenario_str(text).unwrap().resolve().unwrap();
        assert!(resolved.game.common().is_none());
        assert_eq!(resolved.game.grid().horizon(), 2.0);
        assert_eq!(resolved.game.n_paths(), 500);
        assert_eq!(resolved.lsmc_basis, LsmcBasis::ObservationPoly(3));
        assert!(matches!(
            resolved.game.claim(),
            TerminalClaim::BoundedObservation { .. }
        ));
        assert_eq!(
            resolved.view.mc.as_ref().unwrap().init.as_deref(),
            Some("mean")
        );
    }

    #[test]
    fn malformed_matrix_dimensions_name_their_section() {
        let text = "[dims]\nn1 = 2\n\n[market]\nsigma1 = [[0.2]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[market]"), "{err}");
        assert!(err.to_string().contains("sigma1"), "{err}");

        let text = "[drift.1]\ntheta = [[1.0, 0.0]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[drift.1]"), "{err}");
    }

    #[test]
    fn common_block_entries_require_a_common_block() {
        let text = "[dims]\nn0 = 0\n\n[market]\nsigma0 = [[0.2]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[market]"), "{err}");

        let text = "[dims]\nn0 = 0\n\n[drift.0]\ntheta = [[1.0]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[drift.0]"), "{err}");
    }

    #[test]
    fn common_block_must_be_deterministic() {
        let text = "[drift.0]\nzeta = [[0.1]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("drift-noise stream"), "{err}");

        let text = "[drift.0]\nP0 = [[0.1]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("prior stream"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_scenario_str("[grd]\nT = 1.0").is_err());
        assert!(parse_scenario_str("[grid]\nhorizon = 1.0").is_err());
    }

    #[test]
    fn theta_needs_a_positive_diagonal() {
        let text = "[drift.1]\ntheta = [[0.0]]";
        let err = parse_scenario_str(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[drift.1]"), "{err}");
        assert!(err.to_string().contains("positive diagonal"), "{err}");
    }

    #[test]
    fn terminal_kind_fields_are_mutually_exclusive() {
        let err = parse_scenario_str("[terminal]\nkind = \"constant\"\nscale = 0.5")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("[terminal]"), "{err}");

        let err = parse_scenario_str("[terminal]\nkind = \"function\"\nvalue = 1.0")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("[terminal]"), "{err}");

        let err = parse_scenario_str("[terminal]\nkind = \"function\"\nbase = 0.1\nscale = 0.5")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("[terminal]"), "{err}");
    }

    #[test]
    fn mc_options_are_validated() {
        assert!(parse_scenario_str("[mc]\ninit = \"exact\"")
            .unwrap()
            .resolve()
            .is_err());
        assert!(parse_scenario_str("[mc]\nlsmc_basis = \"fourier\"")
            .unwrap()
            .resolve()
            .is_err());
        assert!(parse_scenario_str("[mc]\nlsmc_basis = \"filtered-poly-9\"")
            .unwrap()
            .resolve()
            .is_err());
        assert!(parse_scenario_str("[mc]\nlsmc_basis = \"constant-only\"")
            .unwrap()
            .resolve()
            .is_ok());
        assert!(parse_scenario_str("[mc]\nn_paths = 0")
            .unwrap()
            .resolve()
            .is_err());
    }

    #[test]
    fn grid_limits_are_validated() {
        let err = parse_scenario_str("[grid]\nT = -1.0")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("[grid]"), "{err}");
    }
}
