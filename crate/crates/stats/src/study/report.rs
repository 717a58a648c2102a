use std::fmt::Write as _;

use serde::Serialize;

use super::comparison::{method_comparison, order_effect_test, MethodComparison, OrderEffect, ScoreBlock};
use super::factor::{criterion_matrix, general_factor, kmo, GeneralFactor};
use super::reliability::{interobserver_rho, RhoResult};
use super::table::{Criterion, ResponseTable};
use super::z_adjust;
use crate::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeansRow {
    pub criterion: Criterion,
    pub method: String,
    pub raw_mean: f64,
    pub raw_ci: (f64, f64),
    pub adjusted_mean: f64,
    pub adjusted_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub criterion: Criterion,
    pub method: String,
    pub mean_rank: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestBlock {
    pub criterion: Criterion,
    /// `raw`, `adjusted` or `rank`.
    pub scale: String,
    pub best: String,
    pub tests: Vec<super::MethodTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyMeta {
    pub n_records: usize,
    pub n_raters: usize,
    pub n_items: usize,
    pub methods: Vec<String>,
    pub zero_variance_groups: usize,
    pub excluded_groups: usize,
}

/// Every analysis of the rater study in one serializable record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub meta: StudyMeta,
    pub means: Vec<MeansRow>,
    pub ranks: Vec<RankRow>,
    pub method_tests: Vec<TestBlock>,
    pub interobserver_rho: Vec<RhoResult>,
    pub kmo: f64,
    pub general_factor: GeneralFactor,
    pub order_effects: Vec<OrderEffect>,
}

fn tests_of(criterion: Criterion, scale: &str, b: &ScoreBlock) -> TestBlock {
    TestBlock { criterion, scale: scale.into(), best: b.best.clone(), tests: b.tests.clone() }
}

pub fn study_report(table: &ResponseTable) -> Result<StudyReport> {
    if table.is_empty() {
        return Err(StatsError::InvalidArgument("no responses".into()));
    }
    let cmp: MethodComparison = method_comparison(table)?;
    let mut means = Vec::new();
    let mut ranks = Vec::new();
    let mut method_tests = Vec::new();
    for cc in &cmp.criteria {
        for m in &cmp.methods {
            let raw = cc.raw.summary(m).expect("method present");
            let adj = cc.adjusted.summary(m).expect("method present");
            let rk = cc.ranks.summary(m).expect("method present");
            means.push(MeansRow {
                criterion: cc.criterion,
                method: m.clone(),
                raw_mean: raw.mean,
                raw_ci: (raw.ci_low, raw.ci_high),
                adjusted_mean: adj.mean,
                adjusted_ci: (adj.ci_low, adj.ci_high),
            });
            ranks.push(RankRow { criterion: cc.criterion, method: m.clone(), mean_rank: rk.mean, ci: (rk.ci_low, rk.ci_high) });
        }
        method_tests.push(tests_of(cc.criterion, "raw", &cc.raw));
        method_tests.push(tests_of(cc.criterion, "adjusted", &cc.adjusted));
        method_tests.push(tests_of(cc.criterion, "rank", &cc.ranks));
    }
    let interobserver_rho =
        table.criteria().into_iter().map(|c| interobserver_rho(table, c)).collect::<Result<Vec<_>>>()?;
    let matrix = criterion_matrix(table);
    let kmo_value = kmo(&matrix.data)?;
    let gf = general_factor(&matrix.data, &matrix.criteria)?;
    let order_effects = order_effect_test(table)?;
    let meta = StudyMeta {
        n_records: table.len(),
        n_raters: table.raters().len(),
        n_items: table.items().len(),
        methods: cmp.methods.clone(),
        zero_variance_groups: z_adjust(table).flagged.len(),
        excluded_groups: cmp.criteria.iter().map(|c| c.excluded_groups).sum(),
    };
    Ok(StudyReport {
        meta,
        means,
        ranks,
        method_tests,
        interobserver_rho,
        kmo: kmo_value,
        general_factor: gf,
        order_effects,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

impl StudyReport {
    /// Plain-text rendering of the report for terminals and logs.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(
            s,
            "{} answers from {} raters on {} items, methods: {}",
            m.n_records,
            m.n_raters,
            m.n_items,
            m.methods.join(", ")
        );
        let _ = writeln!(s, "\nMeans (raw | z-adjusted) with 95% item intervals");
        for r in &self.means {
            let _ = writeln!(
                s,
                "  {:<12} {:<14} {:>6.2} [{:>5.2},{:>5.2}] | {:>6.2} [{:>5.2},{:>5.2}]",
                r.criterion.name(),
                r.method,
                r.raw_mean,
                r.raw_ci.0,
                r.raw_ci.1,
                r.adjusted_mean,
                r.adjusted_ci.0,
                r.adjusted_ci.1
            );
        }
        let _ = writeln!(s, "\nAverage ranks (1 = best)");
        for r in &self.ranks {
            let _ = writeln!(s, "  {:<12} {:<14} {:>5.2} [{:.2},{:.2}]", r.criterion.name(), r.method, r.mean_rank, r.ci.0, r.ci.1);
        }
        let _ = writeln!(s, "\nBest method vs. others (two-tailed t)");
        for b in &self.method_tests {
            for t in &b.tests {
                let _ = writeln!(
                    s,
                    "  {:<12} {:<8} {} vs {:<14} t({}) = {:>7}  p = {}",
                    b.criterion.name(),
                    b.scale,
                    b.best,
                    t.method,
                    t.df,
                    fmt_opt(t.t),
                    fmt_opt(t.p)
                );
            }
        }
        let _ = writeln!(s, "\nInter-observer agreement");
        for r in &self.interobserver_rho {
            let _ = writeln!(s, "  {:<12} rho = {:.3} over {} rater pairs", r.criterion.name(), r.rho, r.n_pairs);
        }
        let _ = writeln!(s, "\nKMO = {:.3}", self.kmo);
        let gf = &self.general_factor;
        let _ = writeln!(s, "General factor explains {:.1}% of variance", 100.0 * gf.explained_fraction);
        for (c, l) in gf.criteria.iter().zip(&gf.l1_loadings) {
            let _ = writeln!(s, "  {:<12} {:.3}", c.name(), l);
        }
        let _ = writeln!(s, "\nQuestionnaire variant A vs B");
        for o in &self.order_effects {
            let _ = writeln!(
                s,
                "  {:<12} {:<14} t({}) = {:>7}  p = {}",
                o.criterion.name(),
                o.method,
                o.df,
                fmt_opt(o.t),
                fmt_opt(o.p)
            );
        }
        s
    }
}
