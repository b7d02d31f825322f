use duopoly_core::analysis::ptc_ratio;
use duopoly_core::equilibrium::{integer_order, optimal_quantity, price_quantile, threshold_price, TieQuantityRule, TieRegime, TieSituation};
use duopoly_core::market::discretization_bound;
use duopoly_core::oracle::best_tie_quantity_discrete;
use duopoly_core::simulation::{run_session, AgentPolicy, RoundRecord, SessionLog, Substitution};
use duopoly_core::{
    expected_profit_continuous, expected_profit_discrete, realized_profit, DemandSpec, Equilibrium, GameParams,
    PriceOutcome, Segment, Treatment, TreatmentLabel,
};
use proptest::prelude::*;

/// Valid parameter sets with integral demand, away from the degenerate
/// corners.
fn params() -> impl Strategy<Value = GameParams> {
    (1u32..=8, 1u32..=8, 20u32..=60, 10u32..=80, 1u32..=100).prop_map(|(c, margin, dl, spread, xs)| {
        let cost = c as f64;
        let reserve = cost + margin as f64 + 2.0;
        let dl = dl as f64;
        let dh = dl + spread as f64;
        let x = ((xs as f64 / 100.0) * dl).floor().max(1.0);
        GameParams::new(cost, reserve, dh, dl, x).unwrap()
    })
}

fn treatment() -> impl Strategy<Value = Treatment> {
    prop::sample::select(Treatment::all())
}

fn policy() -> impl Strategy<Value = AgentPolicy> {
    prop_oneof![
        Just(AgentPolicy::default()),
        (0.0..=1.0f64).prop_map(|phi| AgentPolicy::Focal { phi, snap_to_grid: true }),
        (0.0..=1.0f64, 0u32..4).prop_map(|(lambda, jitter)| AgentPolicy::PullToCenter {
            lambda,
            jitter,
            snap_to_grid: true
        }),
        (0.0..1.0f64, 0.0..1.0f64).prop_map(|(up, down)| AgentPolicy::Directional { up, down, initial: None }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn realized_profit_monotone_in_demand(p in 0.1f64..20.0, q in 0u32..200, d in 0u32..200, c in 0.1f64..10.0) {
        let (qf, df) = (q as f64, d as f64);
        prop_assert!(realized_profit(p, qf, df + 1.0, c) >= realized_profit(p, qf, df, c) - 1e-9);
        if d >= q {
            prop_assert!((realized_profit(p, qf, df, c) - (p - c) * qf).abs() < 1e-6);
        }
    }

    #[test]
    fn continuous_expectation_concave(params in params(), u in 0.0f64..1.0, seg_high in any::<bool>()) {
        let mean = if seg_high { params.demand_high } else { params.demand_low };
        let x = params.half_width;
        let p = params.cost + u * (params.reserve - params.cost);
        let h = x / 50.0;
        for k in 1..100 {
            let q = mean - x + k as f64 * h;
            let f = |q: f64| expected_profit_continuous(&params, mean, p, q).unwrap();
            prop_assert!(f(q + h) - 2.0 * f(q) + f(q - h) <= 1e-7);
        }
    }

    #[test]
    fn discretization_within_bound(t in treatment(), tick in 0usize..200, q in 0u32..150, seg_high in any::<bool>()) {
        let params = t.params;
        let grid = params.price_grid();
        let p = grid[tick % grid.len()];
        let seg = if seg_high { Segment::High } else { Segment::Low };
        let spec = params.demand_spec(seg).unwrap();
        let cont = expected_profit_continuous(&params, params.segment_mean(seg), p, q as f64).unwrap();
        let disc = expected_profit_discrete(&params, &spec, p, q).unwrap();
        prop_assert!((cont - disc).abs() <= discretization_bound(&params, p) + 1e-9);
    }

    #[test]
    fn cdf_monotone_and_quantile_round_trip(params in params(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let eq = Equilibrium::solve(&params).unwrap();
        let (lo, hi) = eq.support();
        let (pa, pb) = (lo + a.min(b) * (hi - lo), lo + a.max(b) * (hi - lo));
        prop_assert!(eq.cdf(pa) <= eq.cdf(pb) + 1e-12);
        prop_assert!(eq.cdf(lo).abs() < 1e-9);
        prop_assert!((eq.cdf(hi) - 1.0).abs() < 1e-9);
        let back = price_quantile(&params, eq.cdf(pa)).unwrap();
        prop_assert!((back - pa).abs() < 1e-8, "{} vs {}", back, pa);
    }

    #[test]
    fn indifference_over_support(params in params(), u in 0.0f64..=1.0) {
        let eq = Equilibrium::solve(&params).unwrap();
        let (lo, hi) = eq.support();
        let p = lo + u * (hi - lo);
        prop_assert!((eq.price_payoff(p) - eq.value).abs() < 1e-9 * eq.value.abs().max(1.0));
    }

    #[test]
    fn prices_below_threshold_are_dominated(params in params(), u in 0.0f64..1.0) {
        let eq = Equilibrium::solve(&params).unwrap();
        let p = params.cost + u * (eq.p_tilde - params.cost) * 0.999;
        prop_assert!(eq.price_payoff(p) < eq.value);
    }

    #[test]
    fn threshold_falls_with_width(params in params(), dx in 1u32..10) {
        let mut wider = params;
        wider.half_width = (params.half_width + dx as f64).min(params.demand_low);
        wider.q_cap = (wider.demand_high + wider.half_width + 10.0) as u32;
        prop_assume!(wider.half_width > params.half_width);
        let (a, b) = (threshold_price(&params).unwrap(), threshold_price(&wider).unwrap());
        prop_assert!(b < a);
        let (ea, eb) = (Equilibrium::solve(&params).unwrap(), Equilibrium::solve(&wider).unwrap());
        for k in 0..=50 {
            let p = a + (params.reserve - a) * k as f64 / 50.0;
            prop_assert!(eb.cdf(p) >= ea.cdf(p) - 1e-12);
        }
    }

    #[test]
    fn tie_rule_continuous_at_boundaries(params in params()) {
        let rule = TieQuantityRule::new(&params);
        let (b1, b2) = (rule.lower_boundary, rule.upper_boundary);
        match rule.situation {
            TieSituation::Overlap => {
                let lower = rule.regime_value(TieRegime::LowerInterior, b1).midpoint();
                let middle = rule.regime_value(TieRegime::Middle, b1).midpoint();
                prop_assert!((lower - middle).abs() < 1e-9);
                prop_assert!((middle - (params.demand_high - params.half_width)).abs() < 1e-9);
                let middle2 = rule.regime_value(TieRegime::Middle, b2).midpoint();
                let upper = rule.regime_value(TieRegime::UpperInterior, b2).midpoint();
                prop_assert!((middle2 - upper).abs() < 1e-9);
                prop_assert!((upper - (params.demand_low + params.half_width)).abs() < 1e-9);
            }
            TieSituation::NoOverlap => {
                let lower = rule.regime_value(TieRegime::LowerInterior, b1).midpoint();
                let upper = rule.regime_value(TieRegime::UpperInterior, b1).midpoint();
                prop_assert!((lower - (params.demand_low + params.half_width)).abs() < 1e-9);
                prop_assert!((upper - (params.demand_high - params.half_width)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ptc_ratio_is_scale_free(t in treatment(), tick in 0usize..100, q in 0u32..130, k in 2u32..5, lower in any::<bool>()) {
        let base = t.params;
        let grid = base.price_grid();
        let price = grid[tick % grid.len()];
        let kf = k as f64;
        let scaled = GameParams::new(base.cost, base.reserve, base.demand_high * kf, base.demand_low * kf, base.half_width * kf).unwrap();
        let outcome = if lower { PriceOutcome::lower() } else { PriceOutcome::higher() };
        let record = |quantity: u32| RoundRecord {
            round: 1,
            subject: 0,
            group: 0,
            pair: 0,
            price,
            opp_price: price,
            outcome,
            quantity,
            demand: 0,
            profit: 0.0,
            cumulative: 0.0,
            substituted: Substitution::default(),
        };
        let a = ptc_ratio(&base, &record(q), 0.5).unwrap();
        let b = ptc_ratio(&scaled, &record(q * k), 0.5 * kf).unwrap();
        match (a, b) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0)),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tie_oracle_matches_rule(t in treatment(), tick in 0usize..200) {
        let params = t.params;
        let grid = params.price_grid();
        let p = grid[tick % grid.len()];
        let rule = TieQuantityRule::new(&params).quantity(p);
        let report = best_tie_quantity_discrete(&params, p).unwrap();
        prop_assert!(report.distance_to(integer_order(rule.midpoint(), params.q_cap) as f64) <= 1.0);
    }

    #[test]
    fn simulated_logs_hold_every_invariant(
        t in treatment(),
        policies in prop::collection::vec(policy(), 4..=4),
        groups in 1usize..=3,
        rounds in 1u32..30,
        seed in any::<u64>(),
    ) {
        let seats: Vec<AgentPolicy> = policies.iter().cycle().take(4 * groups).cloned().collect();
        let log = run_session(t, seats.clone(), rounds, seed).unwrap();
        log.validate().unwrap();
        prop_assert_eq!(log.records.len(), 4 * groups * rounds as usize);
        for s in 0..4 * groups {
            let mine: Vec<&RoundRecord> = log.subject_records(s).collect();
            prop_assert_eq!(mine.len(), rounds as usize);
            let mut total = 0.0;
            for r in &mine {
                total = duopoly_core::market::add_tokens(total, r.profit);
                prop_assert!(t.params.is_grid_price(r.price));
            }
            prop_assert_eq!(total, mine.last().unwrap().cumulative);
        }
        let again = run_session(t, seats, rounds, seed).unwrap();
        prop_assert_eq!(&again, &log);
        let csv = log.to_csv_string().unwrap();
        let back = SessionLog::read_csv(csv.as_bytes(), None).unwrap();
        prop_assert_eq!(back.to_csv_string().unwrap(), csv);
        prop_assert_eq!(back, log);
    }
}

#[test]
fn demand_draws_are_uniform() {
    // all-r prices make every round a tie, so both segments are served
    let policy = AgentPolicy::Focal { phi: 1.0, snap_to_grid: true };
    let t = Treatment::preset(TreatmentLabel::HmLu);
    let log = run_session(t, vec![policy; 4], 25_000, 17).unwrap();
    for (seg, spec) in [(Segment::High, DemandSpec::new(100, 20)), (Segment::Low, DemandSpec::new(50, 20))] {
        let draws: Vec<u32> = log.records.iter().filter(|r| r.outcome.segment == seg).map(|r| r.demand).collect();
        let n = draws.len() as f64;
        let cells = spec.cardinality() as f64;
        let expected = n / cells;
        let sigma = (expected * (1.0 - 1.0 / cells)).sqrt();
        for d in spec.support() {
            let count = draws.iter().filter(|&&v| v as i64 == d).count() as f64;
            assert!((count - expected).abs() < 5.0 * sigma, "{seg:?} {d}: {count} vs {expected}");
        }
    }
}

#[test]
fn equilibrium_sampler_matches_cdf() {
    use rand::SeedableRng;
    let params = Treatment::preset(TreatmentLabel::LmHu).params;
    let eq = Equilibrium::solve(&params).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let sample: Vec<f64> = (0..100_000).map(|_| eq.sample(&mut rng, false)).collect();
    let ks = duopoly_core::analysis::ks_distance(&sample, |p| eq.cdf(p));
    assert!(ks < 0.01, "{ks}");
}

#[test]
fn optimal_quantity_examples() {
    let p = Treatment::preset(TreatmentLabel::HmLu).params;
    assert!((optimal_quantity(&p, 10.0, Segment::High).unwrap() - 108.0).abs() < 1e-12);
    assert!((optimal_quantity(&p, 10.0, Segment::Low).unwrap() - 58.0).abs() < 1e-12);
}
