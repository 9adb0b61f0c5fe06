use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pairing_seed;
use crate::scoring::{Metric, OutcomeRow, UnknownMetric};
use crate::style::correlation;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error(transparent)]
    UnknownMetric(#[from] UnknownMetric),
    #[error("no outcomes carry a value for `{0}`")]
    Empty(Metric),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub samples: usize,
    /// Rank 1 is best; ties share the average rank.
    pub ranks: BTreeMap<String, f64>,
    /// Spearman correlation with the full-sample ranking; `None` when either
    /// ranking is constant.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTrajectory {
    pub metric: Metric,
    /// Cumulative mean after each of the agent's shuffled observations.
    pub curves: BTreeMap<String, Vec<f64>>,
    pub final_ranks: BTreeMap<String, f64>,
    pub table: Vec<RankRow>,
}

/// Cumulative-mean curves over a seeded shuffle of each agent's
/// observations, and the rank of every agent at each sample count. Agents
/// with fewer observations than a sample count keep their final mean.
pub fn ranking_trajectory(rows: &[OutcomeRow], metric: &str, order_seed: u64) -> Result<RankingTrajectory, RankingError> {
    let metric: Metric = metric.parse()?;
    let mut per_agent: BTreeMap<String, Vec<(&str, &str, f64)>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = metric.value(row) {
            per_agent
                .entry(row.agent_id.clone())
                .or_default()
                .push((row.negotiation_id.as_str(), row.role.as_str(), v));
        }
    }
    if per_agent.is_empty() {
        return Err(RankingError::Empty(metric));
    }
    let curves: BTreeMap<String, Vec<f64>> = per_agent
        .into_iter()
        .map(|(agent, mut obs)| {
            obs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            let mut values: Vec<f64> = obs.into_iter().map(|o| o.2).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed(order_seed, metric.as_str(), &agent, ""));
            values.shuffle(&mut rng);
            let mut sum = 0.0;
            let curve = values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    sum += v;
                    sum / (i + 1) as f64
                })
                .collect();
            (agent, curve)
        })
        .collect();

    let at = |k: usize| -> Vec<f64> {
        curves
            .values()
            .map(|c| c[k.min(c.len()) - 1])
            .collect()
    };
    let agents: Vec<&String> = curves.keys().collect();
    let longest = curves.values().map(Vec::len).max().unwrap_or(0);
    let final_vec = average_ranks(&at(longest), metric.higher_is_better());
    let final_ranks: BTreeMap<String, f64> = agents.iter().map(|a| (*a).clone()).zip(final_vec.iter().copied()).collect();
    let table = (1..=longest)
        .map(|k| {
            let ranks = average_ranks(&at(k), metric.higher_is_better());
            let agreement = correlation(&ranks, &final_vec).ok();
            RankRow {
                samples: k,
                ranks: agents.iter().map(|a| (*a).clone()).zip(ranks).collect(),
                agreement,
            }
        })
        .collect();
    Ok(RankingTrajectory {
        metric,
        curves,
        final_ranks,
        table,
    })
}

/// 1-based ranks with ties averaged; rank 1 goes to the best value.
pub(crate) fn average_ranks(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if higher_is_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}
