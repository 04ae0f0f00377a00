//! Kidney-exchange pool with hospitals paying tokens for matches.
//!
//! The population is synthetic: ABO types, PRA levels and hospital sizes are
//! drawn from configurable distributions, and a crossmatch succeeds with
//! probability one minus the patient's PRA. Only two-way exchanges are
//! considered.

mod pool;
mod population;

pub use pool::{
    audit_min_token, run_horizon, write_events_csv, ArrivalOutcome, Event, EventKind, ExchangePool,
    HorizonConfig, HorizonRun, PoolDiagnostics, PoolSimulator, Waiting, DEFAULT_DEPARTURE,
};
pub use population::{
    generate_population, BloodType, CompatModel, Hospital, Pair, PairPopulation, PopulationConfig,
    PraBand,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Rule;
use crate::error::Result;

/// One seed of a rule comparison: same population, arrivals and departures,
/// different provider selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub max_abs_min_token: i64,
    pub max_abs_uniform: i64,
    pub choice_share: f64,
    pub mean_candidates: f64,
}

impl ComparisonRow {
    pub fn min_token_smaller(&self) -> bool {
        self.max_abs_min_token < self.max_abs_uniform
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleComparison {
    pub days: u64,
    pub rows: Vec<ComparisonRow>,
}

impl RuleComparison {
    /// Fraction of seeds where the minimum-token rule ends with the smaller
    /// largest absolute ledger.
    pub fn min_token_share(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.min_token_smaller()).count() as f64 / self.rows.len() as f64
    }
}

/// Runs both rules for each seed in parallel. Each seed draws its own population.
pub fn compare_rules(cfg: &PopulationConfig, days: u64, seeds: &[u64]) -> Result<RuleComparison> {
    let mut rows = seeds
        .par_iter()
        .map(|&seed| {
            let pop = generate_population(cfg, seed)?;
            let compat = CompatModel::new(&pop);
            let min = run_horizon(
                &pop,
                &compat,
                &HorizonConfig::new(days, Rule::MinToken, seed),
            )?;
            let uni = run_horizon(
                &pop,
                &compat,
                &HorizonConfig::new(days, Rule::Uniform, seed),
            )?;
            Ok(ComparisonRow {
                seed,
                max_abs_min_token: min.max_abs_tokens(),
                max_abs_uniform: uni.max_abs_tokens(),
                choice_share: min.diagnostics.choice_share(),
                mean_candidates: min.diagnostics.mean_candidates(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.seed);
    Ok(RuleComparison { days, rows })
}
