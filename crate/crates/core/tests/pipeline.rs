use cardgate::harness::experiments::{run_stream, session_config};
use cardgate::harness::{build_scenario, HarnessConfig, Method, Regime, StatsLevel};
use cardgate::optimizer::oracle_plan;

fn config() -> HarnessConfig {
    let mut cfg = HarnessConfig::default();
    cfg.scenario.n_rows = 200_000;
    cfg.scenario.n_queries = 150;
    cfg.scenario.join_right_rows = 20_000;
    cfg
}

fn naive_count(table: &cardgate::ColumnTable, q: &cardgate::Query) -> u64 {
    (0..table.n_rows())
        .filter(|&r| q.predicates.iter().all(|p| p.op.matches(table.column(&p.column).unwrap()[r])))
        .count() as u64
}

#[test]
fn executed_counts_match_exhaustive_scan() {
    let cfg = config();
    for regime in [Regime::Stable, Regime::Unstable] {
        let sc = build_scenario(regime, StatsLevel::Default, &cfg.scenario).unwrap();
        let table = sc.catalog.table("orders").unwrap();
        let (recs, _) = run_stream(&sc, &sc.queries, session_config(Method::GpuGate, &cfg, 1)).unwrap();
        for (r, q) in recs.iter().zip(&sc.queries) {
            assert_eq!(r.actual_rows, Some(naive_count(table, q)), "query {}", q.id);
            assert!(r.total_ms >= r.exec_ms);
        }
    }
}

#[test]
fn join_counts_match_nested_scan() {
    let cfg = config();
    let sc = build_scenario(Regime::Join, StatsLevel::Default, &cfg.scenario).unwrap();
    let (recs, _) = run_stream(&sc, &sc.queries[..10], session_config(Method::Base, &cfg, 1)).unwrap();
    let left = sc.catalog.table("orders").unwrap();
    let right = sc.catalog.table("customers").unwrap();
    for (r, q) in recs.iter().zip(&sc.queries) {
        let j = q.join.as_ref().unwrap();
        let rkeys: std::collections::HashMap<i64, u64> = (0..right.n_rows())
            .filter(|&i| j.right_predicates.iter().all(|p| p.op.matches(right.column(&p.column).unwrap()[i])))
            .fold(Default::default(), |mut m, i| {
                *m.entry(right.column(&j.right_key).unwrap()[i]).or_default() += 1;
                m
            });
        let expected: u64 = (0..left.n_rows())
            .filter(|&i| q.predicates.iter().all(|p| p.op.matches(left.column(&p.column).unwrap()[i])))
            .map(|i| rkeys.get(&left.column(&j.left_key).unwrap()[i]).copied().unwrap_or(0))
            .sum();
        assert_eq!(r.actual_rows, Some(expected));
    }
}

#[test]
fn backends_choose_identical_plans() {
    let cfg = config();
    let sc = build_scenario(Regime::Unstable, StatsLevel::Default, &cfg.scenario).unwrap();
    let run = |m| {
        let (recs, _) = run_stream(&sc, &sc.queries, session_config(m, &cfg, 3)).unwrap();
        recs.into_iter().map(|r| (r.plan_hash, r.gated, r.final_est_rows)).collect::<Vec<_>>()
    };
    assert_eq!(run(Method::CpuGate), run(Method::GpuGate));
}

#[test]
fn gating_does_not_lose_oracle_agreement() {
    let cfg = config();
    let sc = build_scenario(Regime::Unstable, StatsLevel::Default, &cfg.scenario).unwrap();
    let oracle: Vec<u64> = sc
        .queries
        .iter()
        .map(|q| oracle_plan(&sc.catalog, q, &cfg.costs).unwrap().hash)
        .collect();
    let agree = |m| {
        let (recs, _) = run_stream(&sc, &sc.queries, session_config(m, &cfg, 5)).unwrap();
        recs.iter().zip(&oracle).filter(|(r, h)| r.plan_hash == Some(**h)).count()
    };
    let (base, gate) = (agree(Method::Base), agree(Method::GpuGate));
    assert!(gate >= base, "gate {gate} vs base {base}");
}
