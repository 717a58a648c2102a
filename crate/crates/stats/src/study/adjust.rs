use std::collections::BTreeMap;

use serde::Serialize;

use super::table::{Criterion, ResponseTable};
use crate::describe::{mean, std_dev};

#[derive(Debug, Clone, Serialize)]
pub struct ZAdjustment {
    pub table: ResponseTable,
    /// (item, criterion) groups with zero variance, left unadjusted.
    pub flagged: Vec<(String, Criterion)>,
}

/// Standardizes scores within each (item, criterion) group across raters and
/// methods, using the population standard deviation.
pub fn z_adjust(table: &ResponseTable) -> ZAdjustment {
    let mut groups: BTreeMap<(&str, Criterion), Vec<f64>> = BTreeMap::new();
    for r in table.records() {
        groups.entry((r.item_id.as_str(), r.criterion)).or_default().push(r.score);
    }
    let mut stats = BTreeMap::new();
    let mut flagged = Vec::new();
    for (key, scores) in &groups {
        let sd = std_dev(scores, 0);
        if sd > 0.0 && sd.is_finite() {
            stats.insert(*key, (mean(scores), sd));
        } else {
            log::warn!("zero-variance group item={} criterion={}; left unadjusted", key.0, key.1);
            flagged.push((key.0.to_string(), key.1));
        }
    }
    let adjusted = table.map_scores(|r| match stats.get(&(r.item_id.as_str(), r.criterion)) {
        Some((m, sd)) => (r.score - m) / sd,
        None => r.score,
    });
    ZAdjustment { table: adjusted, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::Response;

    fn table(scores: &[f64]) -> ResponseTable {
        ResponseTable::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Response {
                    rater_id: format!("r{i}"),
                    item_id: "i".into(),
                    method: "m".into(),
                    criterion: Criterion::Quality,
                    score: s,
                    variant: "A".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_group() {
        let z = z_adjust(&table(&[1.0, 2.0, 3.0]));
        let got: Vec<f64> = z.table.records().iter().map(|r| r.score).collect();
        // population sd of [1,2,3] is sqrt(2/3); 1 / sqrt(2/3) = 1.224745
        let e = 1.5f64.sqrt();
        for (g, w) in got.iter().zip([-e, 0.0, e]) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((e - 1.2247).abs() < 1e-4);
        assert!(z.flagged.is_empty());
    }

    #[test]
    fn zero_variance_group_is_flagged() {
        let z = z_adjust(&table(&[2.0, 2.0]));
        assert_eq!(z.flagged.len(), 1);
        assert!(z.table.records().iter().all(|r| r.score == 2.0));
    }
}
