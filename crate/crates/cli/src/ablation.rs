//! The ablation grid: each cell is an independent seeded run, cells and seeds
//! run in parallel.

use std::fmt;
use std::str::FromStr;

use ovar_core::env::SplitSel;
use ovar_core::policy::PolicyParams;
use rayon::prelude::*;
use serde::Serialize;

use crate::pipeline;
use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Full,
    NoRl,
    NoSft,
    NoToolReward,
    NoSubReward,
    BaseRewardsOnly,
    G2,
    G4,
    G6,
}

impl Cell {
    pub const ALL: [Cell; 9] = [
        Cell::Full,
        Cell::NoRl,
        Cell::NoSft,
        Cell::NoToolReward,
        Cell::NoSubReward,
        Cell::BaseRewardsOnly,
        Cell::G2,
        Cell::G4,
        Cell::G6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cell::Full => "full",
            Cell::NoRl => "no_rl",
            Cell::NoSft => "no_sft",
            Cell::NoToolReward => "no_tool_reward",
            Cell::NoSubReward => "no_sub_reward",
            Cell::BaseRewardsOnly => "base_rewards_only",
            Cell::G2 => "g2",
            Cell::G4 => "g4",
            Cell::G6 => "g6",
        }
    }

    /// The run configuration this cell differs in.
    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            Cell::Full | Cell::NoRl | Cell::NoSft => {}
            Cell::NoToolReward => c.use_tool_reward = false,
            Cell::NoSubReward => c.use_sub_reward = false,
            Cell::BaseRewardsOnly => {
                c.use_tool_reward = false;
                c.use_sub_reward = false;
            }
            Cell::G2 => c.group_size = 2,
            Cell::G4 => c.group_size = 4,
            Cell::G6 => c.group_size = 6,
        }
        c
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cell {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cell::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown ablation cell {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub cell: Cell,
    pub seed: u64,
    pub base_accuracy: f64,
    pub novel_accuracy: f64,
    pub harmonic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub novel_mean: f64,
    /// Standard error of the novel-accuracy mean across seeds.
    pub novel_se: f64,
    pub base_mean: f64,
    pub hm_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingCheck {
    pub claim: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<RunResult>,
    pub summary: Vec<CellSummary>,
}

/// One cell, one seed: fresh taxonomy, data, SFT and GRPO under `seed`.
pub fn run_cell(cell: Cell, base: &RunConfig, sft: &PolicyParams) -> Result<RunResult, CliError> {
    let cfg = cell.configure(base);
    let tax = pipeline::taxonomy(&cfg)?;
    let policy = match cell {
        Cell::NoRl => sft.clone(),
        Cell::NoSft => {
            let start = PolicyParams::uniform();
            pipeline::train(&tax, &start, None, &cfg.grpo(), &cfg.reward(), &cfg)?.0
        }
        _ => pipeline::train(&tax, sft, None, &cfg.grpo(), &cfg.reward(), &cfg)?.0,
    };
    let report = pipeline::eval(&policy, &tax, SplitSel::All, &cfg)?;
    Ok(RunResult {
        cell,
        seed: cfg.seed,
        base_accuracy: report.base_accuracy.unwrap_or(0.0),
        novel_accuracy: report.novel_accuracy.unwrap_or(0.0),
        harmonic_mean: report.harmonic_mean.unwrap_or(0.0),
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

pub fn summarize(cells: &[Cell], runs: &[RunResult]) -> Vec<CellSummary> {
    cells
        .iter()
        .map(|&cell| {
            let of = |f: fn(&RunResult) -> f64| runs.iter().filter(|r| r.cell == cell).map(f).collect::<Vec<_>>();
            let novel = of(|r| r.novel_accuracy);
            CellSummary {
                cell,
                runs: novel.len(),
                novel_mean: mean(&novel),
                novel_se: standard_error(&novel),
                base_mean: mean(&of(|r| r.base_accuracy)),
                hm_mean: mean(&of(|r| r.harmonic_mean)),
            }
        })
        .collect()
}

/// Runs every configured cell for `ablation_seeds` consecutive seeds starting
/// at `seed`. SFT checkpoints are computed once per seed and shared.
pub fn run(cfg: &RunConfig) -> Result<AblationTable, CliError> {
    let cells = cfg.ablation_cell_list()?;
    let seeds: Vec<u64> = (0..cfg.ablation_seeds as u64).map(|s| cfg.seed + s).collect();
    let sfts: Vec<(u64, PolicyParams)> = seeds
        .par_iter()
        .map(|&seed| {
            let c = RunConfig { seed, ..cfg.clone() };
            let tax = pipeline::taxonomy(&c)?;
            Ok((seed, pipeline::sft_from_scratch(&tax, &c)?))
        })
        .collect::<Result<_, CliError>>()?;
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|&c| (0..sfts.len()).map(move |i| (c, i)))
        .collect();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(cell, i)| {
            let (seed, sft) = &sfts[i];
            run_cell(cell, &RunConfig { seed: *seed, ..cfg.clone() }, sft)
        })
        .collect::<Result<_, CliError>>()?;
    let summary = summarize(&cells, &runs);
    Ok(AblationTable { runs, summary })
}

/// The directional claims the grid is meant to reproduce. Claims whose
/// cells were not run are skipped.
pub fn check_orderings(summary: &[CellSummary]) -> Vec<OrderingCheck> {
    let get = |c: Cell| summary.iter().find(|s| s.cell == c);
    let mut out = Vec::new();
    let mut strict = |a: Cell, b: Cell| {
        if let (Some(x), Some(y)) = (get(a), get(b)) {
            out.push(OrderingCheck {
                claim: format!("{a} > {b}"),
                holds: x.novel_mean > y.novel_mean,
                detail: format!("{:.4} vs {:.4}", x.novel_mean, y.novel_mean),
            });
        }
    };
    strict(Cell::Full, Cell::NoToolReward);
    strict(Cell::Full, Cell::NoSubReward);
    strict(Cell::NoToolReward, Cell::BaseRewardsOnly);
    strict(Cell::NoSubReward, Cell::BaseRewardsOnly);
    strict(Cell::Full, Cell::NoSft);
    let mut within = |a: Cell, b: Cell| {
        if let (Some(x), Some(y)) = (get(a), get(b)) {
            let se = x.novel_se.max(y.novel_se);
            out.push(OrderingCheck {
                claim: format!("{a} >= {b} within one SE"),
                holds: x.novel_mean + se >= y.novel_mean,
                detail: format!("{:.4} vs {:.4} (se {:.4})", x.novel_mean, y.novel_mean, se),
            });
        }
    };
    within(Cell::G6, Cell::G4);
    within(Cell::G4, Cell::G2);
    out
}

pub fn render_table(summary: &[CellSummary]) -> String {
    let mut s = format!(
        "{:<18} {:>5} {:>10} {:>8} {:>9} {:>8}\n",
        "cell", "runs", "novel", "se", "base", "hm"
    );
    for c in summary {
        s.push_str(&format!(
            "{:<18} {:>5} {:>10.4} {:>8.4} {:>9.4} {:>8.4}\n",
            c.cell.name(),
            c.runs,
            c.novel_mean,
            c.novel_se,
            c.base_mean,
            c.hm_mean
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names_round_trip() {
        for c in Cell::ALL {
            assert_eq!(c.name().parse::<Cell>(), Ok(c));
        }
        assert!("w/o rl".parse::<Cell>().is_err());
    }

    #[test]
    fn standard_error_matches_hand_value() {
        // sample sd of [1, 2, 3] is 1, so se = 1 / sqrt(3)
        assert!((standard_error(&[1.0, 2.0, 3.0]) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(standard_error(&[0.5]), 0.0);
    }

    #[test]
    fn orderings_report_violations() {
        let row = |cell, novel_mean, novel_se| CellSummary {
            cell,
            runs: 5,
            novel_mean,
            novel_se,
            base_mean: 0.0,
            hm_mean: 0.0,
        };
        let checks = check_orderings(&[
            row(Cell::Full, 0.8, 0.01),
            row(Cell::NoToolReward, 0.85, 0.01),
            row(Cell::G2, 0.80, 0.01),
            row(Cell::G4, 0.79, 0.02),
        ]);
        assert_eq!(checks.len(), 2);
        assert!(!checks[0].holds);
        assert!(checks[1].holds);
    }
}
