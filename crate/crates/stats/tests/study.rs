use cyclexplain_stats::study::fixture::{synthetic_responses, StudyShape};
use cyclexplain_stats::study::{
    criterion_matrix, general_factor, interobserver_rho, kmo, method_comparison, order_effect_test, study_report,
    z_adjust, Criterion, Response, ResponseTable,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn resp(rater: &str, item: &str, method: &str, c: Criterion, score: f64, variant: &str) -> Response {
    Response {
        rater_id: rater.into(),
        item_id: item.into(),
        method: method.into(),
        criterion: c,
        score,
        variant: variant.into(),
    }
}

fn group_stats(t: &ResponseTable) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for item in t.items() {
        for c in t.criteria() {
            let v: Vec<f64> = t.records().iter().filter(|r| r.item_id == item && r.criterion == c).map(|r| r.score).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            out.push((m, sd));
        }
    }
    out
}

#[test]
fn z_adjusted_groups_are_standardized() {
    let t = synthetic_responses(&StudyShape::default(), 5);
    let z = z_adjust(&t);
    assert!(z.flagged.is_empty());
    for (m, sd) in group_stats(&z.table) {
        assert!(m.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }
}

#[test]
fn z_adjust_is_idempotent_and_shift_invariant() {
    let t = synthetic_responses(&StudyShape::default(), 6);
    let once = z_adjust(&t).table;
    let twice = z_adjust(&once).table;
    for (a, b) in once.records().iter().zip(twice.records()) {
        assert!((a.score - b.score).abs() < 1e-9);
    }
    let shifted = t.map_scores(|r| r.score + if r.item_id == "item03" { 2.0 } else { 0.0 });
    let zs = z_adjust(&shifted).table;
    for (a, b) in once.records().iter().zip(zs.records()) {
        assert!((a.score - b.score).abs() < 1e-12);
    }
}

#[test]
fn rho_extremes() {
    let mut recs = Vec::new();
    for (k, item) in ["i1", "i2", "i3", "i4"].iter().enumerate() {
        let s = [1.0, -2.0, 3.0, 0.0][k];
        recs.push(resp("a", item, "m", Criterion::Quality, s, "A"));
        recs.push(resp("b", item, "m", Criterion::Quality, s, "B"));
        recs.push(resp("c", item, "m", Criterion::Semantics, s, "A"));
        recs.push(resp("d", item, "m", Criterion::Semantics, -s, "B"));
    }
    let t = ResponseTable::new(recs).unwrap();
    assert!((interobserver_rho(&t, Criterion::Quality).unwrap().rho - 1.0).abs() < 1e-12);
    assert!((interobserver_rho(&t, Criterion::Semantics).unwrap().rho + 1.0).abs() < 1e-12);
}

#[test]
fn constant_rater_pairs_are_excluded() {
    let mut recs = Vec::new();
    for (k, item) in ["i1", "i2", "i3"].iter().enumerate() {
        recs.push(resp("a", item, "m", Criterion::Quality, k as f64, "A"));
        recs.push(resp("b", item, "m", Criterion::Quality, 2.0 * k as f64, "B"));
        recs.push(resp("c", item, "m", Criterion::Quality, 1.0, "A"));
    }
    let t = ResponseTable::new(recs).unwrap();
    let r = interobserver_rho(&t, Criterion::Quality).unwrap();
    assert_eq!(r.n_pairs, 1);
    assert_eq!(r.excluded_pairs.len(), 2);
    assert!((r.rho - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rho_invariant_under_positive_affine_rescaling(seed in 0u64..1000, scales in proptest::collection::vec((0.1f64..5.0, -3.0f64..3.0), 8)) {
        let t = synthetic_responses(&StudyShape::default(), seed);
        let raters = t.raters();
        let rescaled = t.map_scores(|r| {
            let k = raters.iter().position(|x| *x == r.rater_id).unwrap();
            scales[k].0 * r.score + scales[k].1
        });
        for c in Criterion::ALL {
            let a = interobserver_rho(&t, c).unwrap().rho;
            let b = interobserver_rho(&rescaled, c).unwrap().rho;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_sums_per_item_are_preserved(seed in 0u64..1000) {
        let t = synthetic_responses(&StudyShape::default(), seed);
        let cmp = method_comparison(&t).unwrap();
        let m = cmp.methods.len() as f64;
        for cc in &cmp.criteria {
            for ranks in cc.item_ranks.values() {
                prop_assert!((ranks.iter().sum::<f64>() - m * (m + 1.0) / 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kmo_is_a_proportion(seed in 0u64..1000) {
        let t = synthetic_responses(&StudyShape::default(), seed);
        let k = kmo(&criterion_matrix(&t).data).unwrap();
        prop_assert!((0.0..=1.0).contains(&k));
    }
}

#[test]
fn single_method_ranks_first_without_tests() {
    let mut recs = Vec::new();
    for r in ["r1", "r2", "r3"] {
        for (k, i) in ["i1", "i2"].iter().enumerate() {
            recs.push(resp(r, i, "only", Criterion::Quality, k as f64, "A"));
        }
    }
    let cmp = method_comparison(&ResponseTable::new(recs).unwrap()).unwrap();
    let cc = cmp.criterion(Criterion::Quality).unwrap();
    assert_eq!(cc.ranks.summary("only").unwrap().mean, 1.0);
    assert!(cc.raw.tests.is_empty() && cc.ranks.tests.is_empty());
}

#[test]
fn dominant_method_ranks_first() {
    let mut recs = Vec::new();
    for (ri, r) in ["r1", "r2", "r3", "r4"].iter().enumerate() {
        for (k, i) in ["i1", "i2", "i3"].iter().enumerate() {
            let base = (k + ri) as f64 - 2.0;
            recs.push(resp(r, i, "a", Criterion::Intuitivity, base + 1.0 + (ri % 2) as f64, "A"));
            recs.push(resp(r, i, "b", Criterion::Intuitivity, base, "A"));
        }
    }
    let cmp = method_comparison(&ResponseTable::new(recs).unwrap()).unwrap();
    let cc = cmp.criterion(Criterion::Intuitivity).unwrap();
    assert_eq!(cc.ranks.summary("a").unwrap().mean, 1.0);
    assert_eq!(cc.ranks.summary("b").unwrap().mean, 2.0);
    assert_eq!(cc.ranks.best, "a");
    assert_eq!(cc.raw.best, "a");
    // t(N-2) with N = 4 raters
    assert_eq!(cc.raw.tests[0].df, 2.0);
    // every rater's rank difference is exactly -1: undefined test, reported as such
    assert!(cc.ranks.tests[0].t.is_none());
    assert!(cc.raw.tests[0].t.unwrap() > 0.0);
}

#[test]
fn incomplete_groups_are_excluded_listwise() {
    let mut recs = Vec::new();
    for r in ["r1", "r2", "r3"] {
        for i in ["i1", "i2"] {
            recs.push(resp(r, i, "a", Criterion::Quality, 1.0, "A"));
            if !(r == "r3" && i == "i2") {
                recs.push(resp(r, i, "b", Criterion::Quality, 0.0, "A"));
            }
        }
    }
    let cmp = method_comparison(&ResponseTable::new(recs).unwrap()).unwrap();
    assert_eq!(cmp.criteria[0].excluded_groups, 1);
}

#[test]
fn order_effects_symmetric_under_variant_swap() {
    let t = synthetic_responses(&StudyShape::default(), 17);
    let swapped = ResponseTable::new(
        t.records()
            .iter()
            .map(|r| Response { variant: if r.variant == "A" { "B".into() } else { "A".into() }, ..r.clone() })
            .collect(),
    )
    .unwrap();
    let a = order_effect_test(&t).unwrap();
    let b = order_effect_test(&swapped).unwrap();
    assert_eq!(a.len(), 12);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.t.unwrap().abs(), y.t.unwrap().abs());
        assert_eq!(x.df, 6.0);
    }
}

#[test]
fn identical_variants_show_no_order_effect() {
    let mut recs = Vec::new();
    for (ri, r) in ["r1", "r2", "r3", "r4"].iter().enumerate() {
        let variant = if ri < 2 { "A" } else { "B" };
        let s = (ri % 2) as f64;
        recs.push(resp(r, "i1", "m", Criterion::Quality, s, variant));
    }
    let o = order_effect_test(&ResponseTable::new(recs).unwrap()).unwrap();
    assert!((o[0].p.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn missing_variant_is_an_error() {
    let recs = vec![resp("r1", "i1", "m", Criterion::Quality, 1.0, "A")];
    assert!(order_effect_test(&ResponseTable::new(recs).unwrap()).is_err());
}

#[test]
fn kmo_of_independent_variables_is_near_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data = DMatrix::from_fn(20_000, 3, |_, _| StandardNormal.sample(&mut rng));
    let k = kmo(&data).unwrap();
    assert!((k - 0.5).abs() < 0.1, "kmo = {k}");
}

#[test]
fn general_factor_explained_fraction_ignores_column_order() {
    let t = synthetic_responses(&StudyShape::default(), 3);
    let m = criterion_matrix(&t);
    let a = general_factor(&m.data, &m.criteria).unwrap();
    let perm = DMatrix::from_fn(m.data.nrows(), 3, |i, j| m.data[(i, [2, 0, 1][j])]);
    let b = general_factor(&perm, &m.criteria).unwrap();
    assert!((a.explained_fraction - b.explained_fraction).abs() < 1e-12);
}

#[test]
fn report_has_all_blocks() {
    let t = synthetic_responses(&StudyShape::default(), 1);
    let r = study_report(&t).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in ["means", "ranks", "method_tests", "interobserver_rho", "kmo", "general_factor", "order_effects"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r.means.len(), 12);
    assert!(r.summary().contains("KMO"));
    // the strongest latent method should come out on top
    let best: Vec<&str> = r.method_tests.iter().map(|b| b.best.as_str()).collect();
    assert!(best.iter().all(|b| *b == "proposed"), "{best:?}");
}
