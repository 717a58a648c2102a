use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::adjust::z_adjust;
use super::table::{Criterion, Response, ResponseTable};
use crate::describe::{mean, midranks, percentile_interval};
use crate::ttest::{paired_t_test, pooled_t_test};
use crate::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    /// 2.5% / 97.5% quantiles of the per-item means.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTest {
    pub method: String,
    pub t: Option<f64>,
    pub df: f64,
    pub p: Option<f64>,
    /// Set when the test is undefined (e.g. constant per-rater differences).
    pub note: Option<String>,
}

/// One table of per-method scores (raw, adjusted or rank) with tests of the best method against the rest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBlock {
    pub methods: Vec<MethodSummary>,
    pub best: String,
    pub tests: Vec<MethodTest>,
}

impl ScoreBlock {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionComparison {
    pub criterion: Criterion,
    pub n_raters: usize,
    pub n_items: usize,
    /// (rater, item) groups dropped because not every method was scored.
    pub excluded_groups: usize,
    pub raw: ScoreBlock,
    pub adjusted: ScoreBlock,
    pub ranks: ScoreBlock,
    /// Mean rank of each method for each item, keyed by item then in method order.
    #[serde(skip)]
    pub item_ranks: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub methods: Vec<String>,
    pub criteria: Vec<CriterionComparison>,
}

impl MethodComparison {
    pub fn criterion(&self, c: Criterion) -> Option<&CriterionComparison> {
        self.criteria.iter().find(|cc| cc.criterion == c)
    }
}

type OwnedCells = BTreeMap<(String, String), BTreeMap<String, f64>>;

fn borrow<'a>(owned: &'a OwnedCells, complete: &BTreeSet<&(String, String)>) -> Cells<'a> {
    owned
        .iter()
        .filter(|(k, _)| complete.contains(k))
        .map(|((r, i), v)| ((r.as_str(), i.as_str()), v.iter().map(|(m, s)| (m.as_str(), *s)).collect()))
        .collect()
}

enum Better {
    Higher,
    Lower,
}

// (rater, item) -> method -> value
type Cells<'a> = BTreeMap<(&'a str, &'a str), BTreeMap<&'a str, f64>>;

fn block(methods: &[String], cells: &Cells<'_>, better: Better, df: usize) -> Result<ScoreBlock> {
    let mut per_item: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut per_rater: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for ((rater, item), values) in cells {
        for (m, v) in values {
            per_item.entry(item).or_default().entry(m).or_default().push(*v);
            per_rater.entry(rater).or_default().entry(m).or_default().push(*v);
        }
    }
    let rater_means = |m: &str| -> Vec<f64> { per_rater.values().map(|by_m| mean(&by_m[m])).collect() };

    let mut summaries = Vec::with_capacity(methods.len());
    for m in methods {
        let all: Vec<f64> = cells.values().map(|v| v[m.as_str()]).collect();
        let item_means: Vec<f64> = per_item.values().map(|by_m| mean(&by_m[m.as_str()])).collect();
        let (ci_low, ci_high) = percentile_interval(&item_means, 0.95);
        summaries.push(MethodSummary { method: m.clone(), mean: mean(&all), ci_low, ci_high });
    }
    let best = summaries
        .iter()
        .reduce(|a, b| {
            let b_wins = match better {
                Better::Higher => b.mean > a.mean,
                Better::Lower => b.mean < a.mean,
            };
            if b_wins {
                b
            } else {
                a
            }
        })
        .map(|s| s.method.clone())
        .unwrap_or_default();

    let best_means = rater_means(&best);
    let tests = methods
        .iter()
        .filter(|m| **m != best)
        .map(|m| match paired_t_test(&best_means, &rater_means(m), Some(df)) {
            Ok(t) => MethodTest { method: m.clone(), t: Some(t.t), df: t.df, p: Some(t.p), note: None },
            Err(e) => MethodTest { method: m.clone(), t: None, df: df as f64, p: None, note: Some(e.to_string()) },
        })
        .collect();
    Ok(ScoreBlock { methods: summaries, best, tests })
}

/// Per criterion: raw means, z-adjusted means and average ranks per method,
/// each with two-tailed t tests (df = N - 2, N raters) of the best method
/// against every other method on per-rater means.
///
/// Ranks are assigned per (rater, item): rank 1 is the highest score, ties
/// share midranks. Groups missing any method are excluded listwise.
pub fn method_comparison(table: &ResponseTable) -> Result<MethodComparison> {
    let methods = table.methods();
    if methods.is_empty() {
        return Err(StatsError::InvalidArgument("response table is empty".into()));
    }
    let raters = table.raters();
    if raters.len() < 3 {
        return Err(StatsError::InvalidArgument(format!(
            "method comparison needs at least 3 raters, found {}",
            raters.len()
        )));
    }
    let df = raters.len() - 2;
    let adjusted = z_adjust(table).table;

    let mut criteria = Vec::new();
    for criterion in table.criteria() {
        let collect = |t: &'_ ResponseTable| -> Vec<Response> {
            t.records().iter().filter(|r| r.criterion == criterion).cloned().collect()
        };
        let raw_records = collect(table);
        let adj_records = collect(&adjusted);
        let to_cells = |recs: &[Response]| -> OwnedCells {
            let mut c = OwnedCells::new();
            for r in recs {
                c.entry((r.rater_id.clone(), r.item_id.clone())).or_default().insert(r.method.clone(), r.score);
            }
            c
        };
        let raw_owned = to_cells(&raw_records);
        let adj_owned = to_cells(&adj_records);
        let total_groups = raw_owned.len();
        let complete: BTreeSet<&(String, String)> =
            raw_owned.iter().filter(|(_, v)| v.len() == methods.len()).map(|(k, _)| k).collect();
        let excluded_groups = total_groups - complete.len();
        if complete.is_empty() {
            return Err(StatsError::Degenerate(format!("no complete (rater, item) groups for {criterion}")));
        }
        let raw_cells = borrow(&raw_owned, &complete);
        let adj_cells = borrow(&adj_owned, &complete);
        let rank_cells: Cells<'_> = raw_cells
            .iter()
            .map(|(k, v)| {
                let neg: Vec<f64> = methods.iter().map(|m| -v[m.as_str()]).collect();
                let ranks = midranks(&neg);
                (*k, methods.iter().map(|m| m.as_str()).zip(ranks).collect())
            })
            .collect();

        let mut item_ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut item_counts: BTreeMap<String, usize> = BTreeMap::new();
        for ((_, item), ranks) in &rank_cells {
            let acc = item_ranks.entry(item.to_string()).or_insert_with(|| vec![0.0; methods.len()]);
            for (k, m) in methods.iter().enumerate() {
                acc[k] += ranks[m.as_str()];
            }
            *item_counts.entry(item.to_string()).or_default() += 1;
        }
        for (item, acc) in item_ranks.iter_mut() {
            let n = item_counts[item] as f64;
            acc.iter_mut().for_each(|v| *v /= n);
        }

        let n_raters = raw_cells.keys().map(|(r, _)| *r).collect::<BTreeSet<_>>().len();
        let n_items = raw_cells.keys().map(|(_, i)| *i).collect::<BTreeSet<_>>().len();
        if excluded_groups > 0 {
            log::warn!("{criterion}: excluded {excluded_groups} incomplete (rater, item) groups");
        }
        criteria.push(CriterionComparison {
            criterion,
            n_raters,
            n_items,
            excluded_groups,
            raw: block(&methods, &raw_cells, Better::Higher, df)?,
            adjusted: block(&methods, &adj_cells, Better::Higher, df)?,
            ranks: block(&methods, &rank_cells, Better::Lower, df)?,
            item_ranks,
        });
    }
    Ok(MethodComparison { methods, criteria })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEffect {
    pub method: String,
    pub criterion: Criterion,
    pub n_a: usize,
    pub n_b: usize,
    pub t: Option<f64>,
    pub df: f64,
    pub p: Option<f64>,
    pub note: Option<String>,
}

/// Pooled two-sample t test per (method, criterion) between raters who
/// answered variant A and those who answered variant B, on per-rater mean
/// raw scores; df = N - 2 with N the number of rater sheets.
pub fn order_effect_test(table: &ResponseTable) -> Result<Vec<OrderEffect>> {
    let variants = table.variants();
    for v in ["A", "B"] {
        if !variants.iter().any(|x| x == v) {
            return Err(StatsError::InvalidArgument(format!("variant {v} is absent from the responses")));
        }
    }
    // (method, criterion) -> variant -> rater -> scores
    let mut groups: BTreeMap<(&str, Criterion), BTreeMap<&str, BTreeMap<&str, Vec<f64>>>> = BTreeMap::new();
    for r in table.records() {
        groups
            .entry((&r.method, r.criterion))
            .or_default()
            .entry(&r.variant)
            .or_default()
            .entry(&r.rater_id)
            .or_default()
            .push(r.score);
    }
    let mut out = Vec::new();
    for ((method, criterion), by_variant) in groups {
        let means = |v: &str| -> Vec<f64> {
            by_variant.get(v).map(|raters| raters.values().map(|s| mean(s)).collect()).unwrap_or_default()
        };
        let (a, b) = (means("A"), means("B"));
        let n = a.len() + b.len();
        let df = n.saturating_sub(2);
        let (t, p, note) = if a.is_empty() || b.is_empty() || df == 0 {
            (None, None, Some("both variants need answers and at least three sheets in total".to_string()))
        } else {
            match pooled_t_test(&a, &b, Some(df)) {
                Ok(r) => (Some(r.t), Some(r.p), None),
                Err(e) => (None, None, Some(e.to_string())),
            }
        };
        out.push(OrderEffect { method: method.to_string(), criterion, n_a: a.len(), n_b: b.len(), t, df: df as f64, p, note });
    }
    Ok(out)
}
