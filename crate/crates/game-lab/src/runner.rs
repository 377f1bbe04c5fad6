//! Command orchestration for the `fbsde-game-lab` binary.
//!
//! Every command is a pure function of (scenario file, seed, flags): it
//! resolves the scenario, runs its checks, writes RFC-4180 CSV tables (CRLF
//! line endings, header row always, floats with 17 significant digits) and a
//! JSON run manifest into the output directory, and reports a pass/fail
//! verdict. Exit codes: 0 when all checks pass, 1 when a statistical check
//! fails (or a numeric procedure breaks down), 2 on input or validation
//! errors.

use crate::equilibrium_lab::{
    default_probe_nodes, mp_residual, nash_deviation_test, saddle_check, DeviationFamily,
};
use crate::error::{LabError, Result};
use crate::market_game::lsmc::lsmc_bsde_solve;
use crate::market_game::{
    cost_functional, simulate_market, wealth_y0, Player, SimulatedMarket, StrategyProcess,
};
use crate::ou_filter::solve_riccati;
use crate::scenario::{load_scenario_file, ResolvedScenario};
use crate::stats::Estimate;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Print a float with 17 significant digits, enough to round-trip f64.
fn cell(x: f64) -> String {
    format!("{x:.16e}")
}

/// One named check with its verdict, kept in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct CheckVerdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckVerdict {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> CheckVerdict {
        CheckVerdict {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Outcome of one command: overall verdict, per-check verdicts and the CSV
/// files written.
#[derive(Debug)]
pub struct CommandReport {
    pub command: String,
    pub pass: bool,
    pub checks: Vec<CheckVerdict>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    scenario: &'a crate::scenario::ScenarioFile,
    seed: u64,
    n_paths: usize,
    flags: Vec<(String, String)>,
    wall_clock_seconds: f64,
    pass: bool,
    checks: &'a [CheckVerdict],
    outputs: Vec<String>,
}

/// Resolve a scenario file and apply command-line overrides. The overrides
/// are folded into the resolved view so the manifest regenerates the run.
pub fn load_and_resolve(
    path: &Path,
    seed: Option<u64>,
    paths: Option<usize>,
) -> Result<ResolvedScenario> {
    let file = load_scenario_file(path)?;
    let mut resolved = file.resolve()?;
    if let Some(s) = seed {
        resolved.game = resolved.game.with_seed(s);
    }
    if let Some(n) = paths {
        if n == 0 {
            return Err(LabError::invalid("--paths must be >= 1"));
        }
        resolved.game = resolved.game.with_n_paths(n);
    }
    if let Some(mc) = resolved.view.mc.as_mut() {
        mc.seed = Some(resolved.game.seed());
        mc.n_paths = Some(resolved.game.n_paths());
    }
    Ok(resolved)
}

/// Cap rayon's global pool from the FBSDE_LAB_THREADS variable. Call once,
/// before any parallel work; later calls are ignored.
pub fn init_thread_pool() {
    if let Ok(text) = std::env::var("FBSDE_LAB_THREADS") {
        if let Ok(n) = text.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

struct CsvTable {
    writer: csv::Writer<std::fs::File>,
    path: PathBuf,
}

impl CsvTable {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<CsvTable> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path)?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        writer
            .write_record(header)
            .map_err(|e| LabError::invalid(format!("cannot write {name}: {e}")))?;
        Ok(CsvTable { writer, path })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer
            .write_record(fields)
            .map_err(|e| LabError::invalid(format!("cannot write CSV row: {e}")))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .map_err(|e| LabError::invalid(format!("cannot flush CSV: {e}")))?;
        Ok(self.path)
    }
}

fn write_manifest(
    out: &Path,
    command: &str,
    resolved: &ResolvedScenario,
    flags: Vec<(String, String)>,
    started: std::time::Instant,
    checks: &[CheckVerdict],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = RunManifest {
        tool: "fbsde-game-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario: &resolved.view,
        seed: resolved.game.seed(),
        n_paths: resolved.game.n_paths(),
        flags,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| LabError::invalid(format!("cannot serialize the run manifest: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// PSD tolerance the Riccati verdict uses; the solver itself aborts on
/// materially negative eigenvalues, so this is a reporting bound.
const RICCATI_PSD_TOLERANCE: f64 = -1.0e-8;

/// Solve the error-covariance Riccati equation for every block and tabulate
/// P(t) with its minimum eigenvalue.
pub fn cmd_riccati(resolved: &ResolvedScenario, out: &Path) -> Result<CommandReport> {
    let started = std::time::Instant::now();
    ensure_out_dir(out)?;
    let game = &resolved.game;
    let grid = game.grid();

    let mut blocks = Vec::new();
    if let Some(blk) = game.common() {
        blocks.push((0usize, blk));
    }
    blocks.push((1, game.player_block(Player::One)));
    blocks.push((2, game.player_block(Player::Two)));

    let mut header: Vec<String> = vec!["t".into()];
    for (k, blk) in &blocks {
        let n = blk.dim();
        for i in 0..n {
            for j in 0..n {
                header.push(format!("P{k}_{i}{j}"));
            }
        }
        header.push(format!("min_eig{k}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::create(out, "riccati.csv", &header_refs)?;

    let mut min_eig_overall = f64::INFINITY;
    let mut solutions = Vec::new();
    for (_, blk) in &blocks {
        solutions.push(solve_riccati(blk.params(), blk.obs(), grid)?);
    }
    for node in 0..grid.n_nodes() {
        let mut row = vec![cell(grid.node(node))];
        for (solution, (_, blk)) in solutions.iter().zip(&blocks) {
            let p = &solution[node];
            let n = blk.dim();
            for i in 0..n {
                for j in 0..n {
                    row.push(cell(p[(i, j)]));
                }
            }
            let min_eig = p
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            min_eig_overall = min_eig_overall.min(min_eig);
            row.push(cell(min_eig));
        }
        table.row(&row)?;
    }
    let csv_path = table.finish()?;

    let checks = vec![CheckVerdict::new(
        "riccati_psd",
        min_eig_overall >= RICCATI_PSD_TOLERANCE,
        format!("minimum eigenvalue over all blocks and nodes: {min_eig_overall:.3e}"),
    )];
    let outputs = vec![csv_path];
    write_manifest(out, "riccati", resolved, vec![], started, &checks, &outputs)?;
    Ok(CommandReport {
        command: "riccati".into(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        outputs,
    })
}

/// z-score bound for the filter-consistency verdict.
const FILTER_Z_BOUND: f64 = 5.0;

/// Compare the empirical filter error covariance against the Riccati
/// prediction at five probe times.
pub fn cmd_filter_check(resolved: &ResolvedScenario, out: &Path) -> Result<CommandReport> {
    let started = std::time::Instant::now();
    ensure_out_dir(out)?;
    let market = simulate_market(&resolved.game)?;
    let grid = market.grid();
    let probes = default_probe_nodes(grid, 5);
    let n = market.n_paths();

    let mut header: Vec<String> = vec!["t".into()];
    for player in [Player::One, Player::Two] {
        let dim = market.true_drift(player).dim();
        let tag = player.index() + 1;
        for a in 0..dim {
            for b in a..dim {
                header.push(format!("emp{tag}_{a}{b}"));
                header.push(format!("ric{tag}_{a}{b}"));
                header.push(format!("z{tag}_{a}{b}"));
            }
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::create(out, "filter_check.csv", &header_refs)?;

    let mut worst_z = 0.0f64;
    for &node in &probes {
        let mut row = vec![cell(grid.node(node))];
        for player in [Player::One, Player::Two] {
            let mu = market.true_drift(player);
            let mu_hat = market.player(player).filter().filtered_mean();
            let predicted = &market.player(player).filter().error_cov()[node];
            let dim = mu.dim();
            for a in 0..dim {
                for b in a..dim {
                    let products: Vec<f64> = (0..n)
                        .map(|p| {
                            let ea = mu.at(p, node, a) - mu_hat.at(p, node, a);
                            let eb = mu.at(p, node, b) - mu_hat.at(p, node, b);
                            ea * eb
                        })
                        .collect();
                    let est = Estimate::from_samples(&products);
                    let diff = est.mean - predicted[(a, b)];
                    let z = if est.stderr > 0.0 {
                        diff / est.stderr
                    } else if diff == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    worst_z = worst_z.max(z.abs());
                    row.push(cell(est.mean));
                    row.push(cell(predicted[(a, b)]));
                    row.push(cell(z));
                }
            }
        }
        table.row(&row)?;
    }
    let csv_path = table.finish()?;

    let checks = vec![CheckVerdict::new(
        "filter_consistency",
        worst_z <= FILTER_Z_BOUND,
        format!("worst |z| over probes and entries: {worst_z:.3}"),
    )];
    let outputs = vec![csv_path];
    write_manifest(
        out,
        "filter-check",
        resolved,
        vec![],
        started,
        &checks,
        &outputs,
    )?;
    Ok(CommandReport {
        command: "filter-check".into(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        outputs,
    })
}

/// Options for the equilibrium command.
#[derive(Debug, Clone, Copy, Default)]
pub struct EquilibriumOptions {
    /// Run the zero-sum saddle check at (Ibar_1, 0) instead of the
    /// two-cost Nash certification.
    pub zero_sum: bool,
    /// Diagnostic multiplier on manager 1's candidate (1.0 = untouched).
    pub perturb1: Option<f64>,
    /// Diagnostic multiplier on manager 2's candidate.
    pub perturb2: Option<f64>,
}

fn scaled_candidate(base: &StrategyProcess, factor: f64) -> Result<StrategyProcess> {
    if !(factor.is_finite() && factor >= 0.0) {
        return Err(LabError::invalid(format!(
            "candidate multiplier must be nonnegative and finite, got {factor}"
        )));
    }
    base.perturbed(base.values(), factor - 1.0)
}

fn candidate_summary_table(
    out: &Path,
    market: &SimulatedMarket,
    i1: &StrategyProcess,
    i2: &StrategyProcess,
) -> Result<PathBuf> {
    let grid = market.grid();
    let n = market.n_paths();
    let mut table = CsvTable::create(
        out,
        "candidates.csv",
        &["t", "i1_mean", "i1_sd", "i2_mean", "i2_sd"],
    )?;
    for node in 0..grid.n_nodes() {
        let col = |s: &StrategyProcess| {
            let xs: Vec<f64> = (0..n).map(|p| s.values().at(p, node, 0)).collect();
            Estimate::from_samples(&xs)
        };
        let a = col(i1);
        let b = col(i2);
        table.row(&[
            cell(grid.node(node)),
            cell(a.mean),
            cell(a.sd),
            cell(b.mean),
            cell(b.sd),
        ])?;
    }
    table.finish()
}

/// Certify the candidate pair: stationarity residuals and unilateral
/// deviations for both managers (or the saddle check in zero-sum mode).
pub fn cmd_equilibrium(
    resolved: &ResolvedScenario,
    out: &Path,
    options: EquilibriumOptions,
) -> Result<CommandReport> {
    let started = std::time::Instant::now();
    ensure_out_dir(out)?;
    let market = simulate_market(&resolved.game)?;
    let grid = market.grid();

    let mut i1 = market.player(Player::One).candidate().clone();
    let mut i2 = if options.zero_sum {
        StrategyProcess::zero(Player::Two, market.n_paths(), grid)
    } else {
        market.player(Player::Two).candidate().clone()
    };
    let mut flags = vec![("zero_sum".to_string(), options.zero_sum.to_string())];
    if let Some(f) = options.perturb1 {
        i1 = scaled_candidate(&i1, f)?;
        flags.push(("perturb1".into(), f.to_string()));
    }
    if let Some(f) = options.perturb2 {
        i2 = scaled_candidate(&i2, f)?;
        flags.push(("perturb2".into(), f.to_string()));
    }

    let mut checks = Vec::new();
    let mut outputs = vec![candidate_summary_table(out, &market, &i1, &i2)?];

    if options.zero_sum {
        let mut table = CsvTable::create(
            out,
            "saddle.csv",
            &["family", "player", "eps", "delta_j", "stderr"],
        )?;
        for family in DeviationFamily::ALL {
            let report = saddle_check(&market, &i1, &i2, family)?;
            for (side, rows) in [("1", &report.player_one), ("2", &report.player_two)] {
                for (eps, est) in rows {
                    table.row(&[
                        family.label().into(),
                        side.into(),
                        cell(*eps),
                        cell(est.mean),
                        cell(est.stderr),
                    ])?;
                }
            }
            checks.push(CheckVerdict::new(
                format!("saddle_{}", family.label()),
                report.pass,
                "J(v1, u2) >= J(u1, u2) >= J(u1, v2) within 3 stderr on the eps grid",
            ));
        }
        outputs.push(table.finish()?);
    } else {
        // Costs at the evaluated pair.
        let mut cost_table = CsvTable::create(
            out,
            "costs.csv",
            &["player", "j", "stderr", "running_part", "wealth_part"],
        )?;
        for player in [Player::One, Player::Two] {
            let estimate = cost_functional(&market, player, &i1, &i2)?;
            cost_table.row(&[
                format!("{}", player.index() + 1),
                cell(estimate.total.mean),
                cell(estimate.total.stderr),
                cell(estimate.running_part),
                cell(estimate.wealth_part),
            ])?;
        }
        outputs.push(cost_table.finish()?);

        // Stationarity residuals.
        let probes = default_probe_nodes(grid, 5);
        let mp = mp_residual(&market, &i1, &i2, &probes)?;
        let mut mp_table = CsvTable::create(
            out,
            "mp_residual.csv",
            &["t", "player", "closed_form", "regression", "threshold"],
        )?;
        for player in [Player::One, Player::Two] {
            let idx = player.index();
            for (k, &t) in mp.probe_times.iter().enumerate() {
                mp_table.row(&[
                    cell(t),
                    format!("{}", idx + 1),
                    cell(mp.closed_form[idx][k]),
                    cell(mp.regression[idx][k]),
                    cell(mp.regression_threshold[idx][k]),
                ])?;
            }
        }
        outputs.push(mp_table.finish()?);
        let worst_closed = mp
            .closed_form
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b));
        checks.push(CheckVerdict::new(
            "mp_residual",
            mp.pass,
            format!("worst closed-form residual {worst_closed:.3e}"),
        ));

        // Unilateral deviations.
        let mut dev_table = CsvTable::create(
            out,
            "deviations.csv",
            &[
                "player",
                "family",
                "eps",
                "delta_j",
                "stderr",
                "quad_per_path",
                "quad_oracle",
                "min_location",
                "grid_spacing",
            ],
        )?;
        for player in [Player::One, Player::Two] {
            for family in DeviationFamily::ALL {
                let report = nash_deviation_test(&market, &i1, &i2, player, family)?;
                for (eps, est) in report.epsilons.iter().zip(&report.delta_j) {
                    dev_table.row(&[
                        format!("{}", player.index() + 1),
                        family.label().into(),
                        cell(*eps),
                        cell(est.mean),
                        cell(est.stderr),
                        cell(report.quad_coefficient.mean),
                        cell(report.independent_quad.mean),
                        cell(report.min_location),
                        cell(report.grid_spacing),
                    ])?;
                }
                checks.push(CheckVerdict::new(
                    format!("nash_deviation_p{}_{}", player.index() + 1, family.label()),
                    report.pass,
                    format!(
                        "min location {:.3e} (spacing {:.3e}), curvature {:.4} vs oracle {:.4}",
                        report.min_location,
                        report.grid_spacing,
                        report.quad_coefficient.mean,
                        report.independent_quad.mean
                    ),
                ));
            }
        }
        outputs.push(dev_table.finish()?);
    }

    write_manifest(
        out,
        "equilibrium",
        resolved,
        flags,
        started,
        &checks,
        &outputs,
    )?;
    Ok(CommandReport {
        command: "equilibrium".into(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        outputs,
    })
}

/// Absolute floor on the cross-check gap so exactly deterministic scenarios
/// (zero standard error on both sides) still pass at rounding level.
const XCHECK_ABSOLUTE_FLOOR: f64 = 1.0e-8;

/// Compare the deflator estimate of y(0) with the backward LSMC rollback.
pub fn cmd_bsde_xcheck(resolved: &ResolvedScenario, out: &Path) -> Result<CommandReport> {
    let started = std::time::Instant::now();
    ensure_out_dir(out)?;
    let market = simulate_market(&resolved.game)?;
    let i1 = market.player(Player::One).candidate().clone();
    let i2 = market.player(Player::Two).candidate().clone();

    let direct = wealth_y0(&market, &i1, &i2)?;
    let solution = lsmc_bsde_solve(&market, &i1, &i2, &resolved.lsmc_basis)?;
    let gap = (direct.mean - solution.initial_wealth.mean).abs();
    let combined = (direct.stderr.powi(2) + solution.initial_wealth.stderr.powi(2)).sqrt();
    let threshold = (3.0 * combined).max(XCHECK_ABSOLUTE_FLOOR);

    let mut table = CsvTable::create(
        out,
        "bsde_xcheck.csv",
        &[
            "y0_deflator",
            "stderr_deflator",
            "y0_lsmc",
            "stderr_lsmc",
            "gap",
            "threshold",
            "basis",
            "max_condition_number",
            "dropped_directions",
        ],
    )?;
    table.row(&[
        cell(direct.mean),
        cell(direct.stderr),
        cell(solution.initial_wealth.mean),
        cell(solution.initial_wealth.stderr),
        cell(gap),
        cell(threshold),
        format!("{:?}", resolved.lsmc_basis),
        cell(solution.max_condition_number),
        solution.dropped_directions.to_string(),
    ])?;
    let csv_path = table.finish()?;

    let checks = vec![CheckVerdict::new(
        "bsde_xcheck",
        gap <= threshold,
        format!("|gap| = {gap:.6e} vs threshold {threshold:.6e}"),
    )];
    let outputs = vec![csv_path];
    write_manifest(
        out,
        "bsde-xcheck",
        resolved,
        vec![],
        started,
        &checks,
        &outputs,
    )?;
    Ok(CommandReport {
        command: "bsde-xcheck".into(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        outputs,
    })
}
