use std::collections::BTreeMap;

use clickmodel::clicklog::{parse_log, write_log, ClickLog, InterfaceKind, LayoutShape};
use clickmodel::estimation::{brute_force_mle, fit, fit_counting, fit_em, fit_em_from, log_likelihood, FitOptions};
use clickmodel::evaluation::evaluate;
use clickmodel::models::{make_model, ModelInstance, ModelKind, Table, TableName};
use clickmodel::simulation::{random_instance, simulate_log, LayoutPolicy, SimConfig};
use proptest::prelude::*;

fn table(entries: &[(&str, f64)]) -> Table {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn pbm_log(f: &[(&str, f64)], g: &[(&str, f64)], sessions: usize, seed: u64) -> ClickLog {
    let shape = LayoutShape::new(1, f.len()).unwrap();
    let cfg = SimConfig::with_counts(shape, InterfaceKind::SingleList, g.len(), 0, sessions, seed, LayoutPolicy::UniformWithoutReplacement);
    let model = make_model(
        ModelKind::Pbm,
        shape,
        &cfg.vocab(),
        [(TableName::Position, table(f)), (TableName::Item, table(g))].into(),
    )
    .unwrap();
    simulate_log(&model, &cfg).unwrap()
}

fn products(model: &ModelInstance) -> BTreeMap<(String, String), f64> {
    let f = model.table(TableName::Position).unwrap();
    let g = model.table(TableName::Item).unwrap();
    f.iter()
        .flat_map(|(p, fv)| g.iter().map(move |(y, gv)| ((p.clone(), y.clone()), fv * gv)))
        .collect()
}

#[test]
fn pbm_em_agrees_with_grid_search() {
    let log = pbm_log(&[("1,1", 0.9), ("1,2", 0.5)], &[("item-1", 0.7), ("item-2", 0.3)], 2000, 12);
    let em = fit_em(ModelKind::Pbm, &log, &FitOptions { rel_tol: 1e-13, max_iters: 100_000, ..Default::default() }).unwrap();
    let bf = brute_force_mle(ModelKind::Pbm, &log, 1e-3).unwrap();
    assert!((em.final_ll() - bf.log_likelihood).abs() < 1e-6);
    // the products are identifiable even though f and g individually are not
    let (a, b) = (products(&em.model), products(&bf.model));
    for (k, v) in &a {
        assert!((v - b[k]).abs() < 1e-3, "{k:?}: {v} vs {}", b[k]);
    }
}

#[test]
fn pbm_recovers_products_on_a_large_log() {
    let log = pbm_log(&[("1,1", 1.0), ("1,2", 0.5)], &[("item-1", 0.8), ("item-2", 0.2)], 200_000, 5);
    let report = fit(ModelKind::Pbm, &log, &FitOptions::default()).unwrap();
    let want = [(("1,1", "item-1"), 0.8), (("1,1", "item-2"), 0.2), (("1,2", "item-1"), 0.4), (("1,2", "item-2"), 0.1)];
    let got = products(&report.model);
    for ((p, y), v) in want {
        let est = got[&(p.to_string(), y.to_string())];
        assert!((est - v).abs() < 0.01, "{p} {y}: {est} vs {v}");
    }
    assert!(report.converged);
    let f = report.model.table(TableName::Item).unwrap();
    assert_eq!(f.values().copied().fold(0.0, f64::max), 1.0);
}

#[test]
fn frozen_unit_examination_reduces_pbm_to_item_ratios() {
    let log = pbm_log(&[("1,1", 0.9), ("1,2", 0.6), ("1,3", 0.3)], &[("item-1", 0.7), ("item-2", 0.3), ("item-3", 0.5), ("item-4", 0.6)], 5000, 2);
    let shape = LayoutShape::new(1, 3).unwrap();
    let start = make_model(
        ModelKind::Pbm,
        shape,
        log.vocab(),
        [
            (TableName::Position, table(&[("1,1", 1.0), ("1,2", 1.0), ("1,3", 1.0)])),
            (TableName::Item, log.vocab().items().iter().map(|y| (y.clone(), 0.5)).collect()),
        ]
        .into(),
    )
    .unwrap();
    let em = fit_em_from(&start, &[TableName::Position], &log, &FitOptions { rel_tol: 1e-15, max_iters: 10, ..Default::default() }).unwrap();
    let ctr = fit_counting(ModelKind::Dctr, &log, &FitOptions::default()).unwrap();
    // with f ≡ 1 the posterior of the item latent is the click itself: one step is exact
    assert_eq!(em.model.table(TableName::Item), ctr.model.table(TableName::Item));
    assert_eq!(em.model.table(TableName::Position).unwrap().values().collect::<Vec<_>>(), vec![&1.0; 3]);
}

#[test]
fn em_log_likelihood_never_decreases() {
    let shape = LayoutShape::new(2, 3).unwrap();
    for (kind, iface) in [
        (ModelKind::Ubm, InterfaceKind::Grid),
        (ModelKind::Dbn, InterfaceKind::Grid),
        (ModelKind::Dcm, InterfaceKind::Grid),
        (ModelKind::TrustPbm, InterfaceKind::Grid),
        (ModelKind::Cacm, InterfaceKind::Carousel),
        (ModelKind::TopicsItemsV2, InterfaceKind::Carousel),
    ] {
        let cfg = SimConfig::with_counts(shape, iface, 15, 4, 3000, 9, LayoutPolicy::UniformWithoutReplacement);
        let truth = random_instance(kind, shape, &cfg.vocab(), 21).unwrap();
        let log = simulate_log(&truth, &cfg).unwrap();
        let report = fit(kind, &log, &FitOptions { max_iters: 60, ..Default::default() }).unwrap();
        for w in report.ll_trajectory.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{kind}: {} -> {}", w[0], w[1]);
        }
        let direct = log_likelihood(&report.model, &log).unwrap();
        assert!((direct - report.final_ll()).abs() < 1e-6 * direct.abs(), "{kind}: {direct} vs {}", report.final_ll());
        assert!(report.final_ll() >= log_likelihood(&truth, &log).unwrap() - 1.0, "{kind} fit worse than truth");
    }
}

fn arb_log() -> impl Strategy<Value = (ModelKind, ClickLog)> {
    (0usize..ModelKind::ALL.len(), 1usize..3, 1usize..4, 1usize..40, any::<u64>()).prop_map(|(k, m, n, sessions, seed)| {
        let kind = ModelKind::ALL[k];
        let shape = LayoutShape::new(m, n).unwrap();
        let iface = if kind.needs_topics() {
            InterfaceKind::Carousel
        } else if m == 1 {
            InterfaceKind::SingleList
        } else {
            InterfaceKind::Grid
        };
        let cfg = SimConfig::with_counts(shape, iface, 2 * m * n, 2 * m, sessions, seed, LayoutPolicy::UniformWithoutReplacement);
        let truth = random_instance(kind, shape, &cfg.vocab(), seed ^ 1).unwrap();
        (kind, simulate_log(&truth, &cfg).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logs_round_trip_through_jsonl((_, log) in arb_log()) {
        let mut buf = Vec::new();
        write_log(&log, &mut buf).unwrap();
        let back = parse_log(&buf[..]).unwrap();
        prop_assert_eq!(back.sessions().len(), log.sessions().len());
        let mut again = Vec::new();
        write_log(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn fitted_models_are_valid_and_score_at_least_one((kind, log) in arb_log()) {
        let report = fit(kind, &log, &FitOptions { max_iters: 30, ..Default::default() }).unwrap();
        let eval = evaluate(&report.model, &log).unwrap();
        // a maximum-likelihood fit never assigns zero probability to its own data
        prop_assert!(!eval.overall_perplexity.is_infinite());
        prop_assert!(eval.overall_perplexity.value() >= 1.0 - 1e-12);
        prop_assert!(eval.total_ll <= 0.0);
        for t in report.model.tables().values() {
            for v in t.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn session_order_does_not_change_the_fit((kind, log) in arb_log(), rot in 0usize..40) {
        let n = log.len();
        let order: Vec<usize> = (0..n).map(|k| (k + rot) % n).collect();
        let shuffled = log.reordered(&order);
        let opts = FitOptions { max_iters: 20, ..Default::default() };
        let a = fit(kind, &log, &opts).unwrap();
        let b = fit(kind, &shuffled, &opts).unwrap();
        for (name, ta) in a.model.tables() {
            let tb = &b.model.tables()[name];
            for (key, va) in ta {
                prop_assert!((va - tb[key]).abs() < 1e-9, "{} {}[{}]: {} vs {}", kind, name, key, va, tb[key]);
            }
        }
    }
}

#[test]
fn fitted_parameters_survive_json_bit_for_bit() {
    let log = pbm_log(&[("1,1", 0.9), ("1,2", 0.4)], &[("item-1", 0.7), ("item-2", 0.3), ("item-3", 0.55)], 3000, 17);
    let report = fit(ModelKind::Pbm, &log, &FitOptions::default()).unwrap();
    let back = ModelInstance::from_json(&report.model.to_json().unwrap()).unwrap();
    for (name, table) in report.model.tables() {
        for (key, v) in table {
            assert_eq!(v.to_bits(), back.tables()[name][key].to_bits(), "{name}[{key}]");
        }
    }
}
