use std::collections::BTreeMap;

use serde::Serialize;

use super::table::{Criterion, ResponseTable};
use crate::describe::pearson;
use crate::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoResult {
    pub criterion: Criterion,
    pub rho: f64,
    pub n_raters: usize,
    pub n_pairs: usize,
    /// Rater pairs dropped because one of the two answered with a constant vector.
    pub excluded_pairs: Vec<(String, String)>,
}

/// Mean pairwise Pearson correlation between raters' answer vectors for one
/// criterion. Each rater's vector is ordered by (item, method) and all raters
/// must have answered the same set of (item, method) cells.
pub fn interobserver_rho(table: &ResponseTable, criterion: Criterion) -> Result<RhoResult> {
    let mut per_rater: BTreeMap<&str, BTreeMap<(&str, &str), f64>> = BTreeMap::new();
    for r in table.records().iter().filter(|r| r.criterion == criterion) {
        per_rater.entry(&r.rater_id).or_default().insert((&r.item_id, &r.method), r.score);
    }
    if per_rater.len() < 2 {
        return Err(StatsError::InvalidArgument(format!(
            "inter-observer agreement needs at least two raters for {criterion}"
        )));
    }
    let raters: Vec<&str> = per_rater.keys().copied().collect();
    let reference: Vec<(&str, &str)> = per_rater[raters[0]].keys().copied().collect();
    for r in &raters[1..] {
        if !per_rater[r].keys().copied().eq(reference.iter().copied()) {
            return Err(StatsError::InvalidArgument(format!(
                "rater {r} did not answer the same (item, method) cells as rater {} for {criterion}",
                raters[0]
            )));
        }
    }
    let vectors: Vec<Vec<f64>> = raters.iter().map(|r| per_rater[r].values().copied().collect()).collect();

    let mut sum = 0.0;
    let mut n_pairs = 0;
    let mut excluded_pairs = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            match pearson(&vectors[i], &vectors[j]) {
                Some(r) => {
                    sum += r;
                    n_pairs += 1;
                }
                None => {
                    log::warn!("constant answers; excluding rater pair ({}, {})", raters[i], raters[j]);
                    excluded_pairs.push((raters[i].to_string(), raters[j].to_string()));
                }
            }
        }
    }
    if n_pairs == 0 {
        return Err(StatsError::Degenerate(format!("every rater pair was excluded for {criterion}")));
    }
    Ok(RhoResult { criterion, rho: sum / n_pairs as f64, n_raters: raters.len(), n_pairs, excluded_pairs })
}
