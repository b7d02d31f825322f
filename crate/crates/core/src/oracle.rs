//! Brute-force checks of the closed forms.
//!
//! Everything here is computed by exhaustive evaluation over the integer
//! order grid or a price mesh, so it can be compared against the
//! equilibrium module without sharing its algebra.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    conditional_profit, optimal_quantity, tie_optimal_quantity, Equilibrium, TieQuantityRule,
};
use crate::error::{Error, Result};
use crate::market::{expected_profit_discrete, DemandSpec, GameParams, Segment, Treatment};

/// Maximizers of a sweep, smallest first, with the maximum value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseReport {
    pub argmax: Vec<f64>,
    pub max_value: f64,
    /// Max minus min of the objective over grid points inside the
    /// equilibrium support (price sweeps only).
    pub support_spread: Option<f64>,
}

impl BestResponseReport {
    pub fn gap(&self, candidate_value: f64) -> f64 {
        (self.max_value - candidate_value).max(0.0)
    }

    /// Distance from `q` to the nearest maximizer.
    pub fn distance_to(&self, q: f64) -> f64 {
        self.argmax
            .iter()
            .map(|a| (a - q).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn collect_argmax(values: impl Iterator<Item = (f64, f64)>) -> (Vec<f64>, f64) {
    let values: Vec<(f64, f64)> = values.collect();
    let max = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * max.abs().max(1.0);
    let argmax = values
        .iter()
        .filter(|&&(_, v)| v >= max - tol)
        .map(|&(x, _)| x)
        .collect();
    (argmax, max)
}

/// Exhaustive sweep of the exact discrete expected profit over all integer
/// orders in `[0, q_cap]`.
pub fn best_quantity_discrete(params: &GameParams, spec: &DemandSpec, price: f64) -> Result<BestResponseReport> {
    let values = (0..=params.q_cap)
        .map(|q| Ok((q as f64, expected_profit_discrete(params, spec, price, q)?)))
        .collect::<Result<Vec<_>>>()?;
    let (argmax, max_value) = collect_argmax(values.into_iter());
    Ok(BestResponseReport {
        argmax,
        max_value,
        support_spread: None,
    })
}

/// Exhaustive sweep of the tie objective: an equal-odds lottery between the
/// two segment supports.
pub fn best_tie_quantity_discrete(params: &GameParams, price: f64) -> Result<BestResponseReport> {
    let high = params.demand_spec(Segment::High)?;
    let low = params.demand_spec(Segment::Low)?;
    let values = (0..=params.q_cap)
        .map(|q| {
            let v = 0.5 * expected_profit_discrete(params, &high, price, q)?
                + 0.5 * expected_profit_discrete(params, &low, price, q)?;
            Ok((q as f64, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let (argmax, max_value) = collect_argmax(values.into_iter());
    Ok(BestResponseReport {
        argmax,
        max_value,
        support_spread: None,
    })
}

/// Stage-1 objective against an arbitrary opponent CDF, evaluated at every
/// grid price: `F(p) E[profit | higher] + (1 - F(p)) E[profit | lower]`.
pub fn best_price_response(
    params: &GameParams,
    opponent_cdf: &dyn Fn(f64) -> f64,
    grid: &[f64],
) -> Result<BestResponseReport> {
    if grid.is_empty() {
        return Err(Error::Empty("price grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let mut prev = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(sorted.len());
    for &p in &sorted {
        let f = opponent_cdf(p);
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidCdf(format!("F({p}) = {f} outside [0, 1]")));
        }
        if f < prev - 1e-12 {
            return Err(Error::InvalidCdf(format!("decreasing at p = {p}")));
        }
        prev = f;
        let v = f * conditional_profit(params, p, Segment::Low)
            + (1.0 - f) * conditional_profit(params, p, Segment::High);
        values.push((p, v));
    }
    let support_spread = Equilibrium::solve(params).ok().and_then(|eq| {
        let inside: Vec<f64> = values
            .iter()
            .filter(|&&(p, _)| p >= eq.p_tilde && p <= params.reserve)
            .map(|&(_, v)| v)
            .collect();
        if inside.is_empty() {
            None
        } else {
            let hi = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = inside.iter().copied().fold(f64::INFINITY, f64::min);
            Some(hi - lo)
        }
    });
    let (argmax, max_value) = collect_argmax(values.into_iter());
    Ok(BestResponseReport {
        argmax,
        max_value,
        support_spread,
    })
}

/// Largest deviation of the stage-1 payoff against the equilibrium CDF from
/// the equilibrium value, over an evenly spaced support mesh.
pub fn indifference_residual(params: &GameParams, n_grid: usize) -> Result<f64> {
    if n_grid < 2 {
        return Err(Error::Empty("indifference mesh needs at least 2 points".into()));
    }
    let eq = Equilibrium::solve(params)?;
    let (lo, hi) = eq.support();
    let (c, x) = (params.cost, params.half_width);
    let (dh, dl) = (params.demand_high, params.demand_low);
    let mut worst: f64 = 0.0;
    for k in 0..n_grid {
        let p = lo + (hi - lo) * k as f64 / (n_grid - 1) as f64;
        let f = eq.cdf(p);
        let payoff = f * (dl - dh) * (p - c) + dh * (p - c) - c * x + c * c * x / p;
        worst = worst.max((payoff - eq.value).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfValidityReport {
    pub monotone: bool,
    pub in_unit_interval: bool,
    pub starts_at_zero: bool,
    pub ends_at_one: bool,
    pub max_jump: f64,
    pub jump_bound: f64,
}

impl CdfValidityReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.in_unit_interval && self.starts_at_zero && self.ends_at_one && self.max_jump < self.jump_bound
    }
}

/// Checks the equilibrium CDF on an evenly spaced support mesh: monotone,
/// inside `[0, 1]`, anchored at both ends, and without atoms (adjacent
/// mesh points never jump by `10 / n_grid` or more).
pub fn cdf_validity(params: &GameParams, n_grid: usize) -> Result<CdfValidityReport> {
    if n_grid < 2 {
        return Err(Error::Empty("CDF mesh needs at least 2 points".into()));
    }
    let eq = Equilibrium::solve(params)?;
    let (lo, hi) = eq.support();
    let values: Vec<f64> = (0..n_grid)
        .map(|k| eq.cdf(lo + (hi - lo) * k as f64 / (n_grid - 1) as f64))
        .collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    let in_unit_interval = values.iter().all(|v| (0.0..=1.0).contains(v));
    let max_jump = values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    Ok(CdfValidityReport {
        monotone,
        in_unit_interval,
        starts_at_zero: values[0].abs() < 1e-9,
        ends_at_one: (values[n_grid - 1] - 1.0).abs() < 1e-12,
        max_jump,
        jump_bound: 10.0 / n_grid as f64,
    })
}

/// Root of the threshold condition by plain bisection, independent of the
/// quadratic-formula route.
pub fn threshold_by_bisection(params: &GameParams) -> Option<f64> {
    let (c, r, dh, dl, x) = (
        params.cost,
        params.reserve,
        params.demand_high,
        params.demand_low,
        params.half_width,
    );
    let win = |p: f64| dh * p - dh * c - c * x + c * c * x / p;
    let target = dl * r - dl * c - c * x + c * c * x / r;
    let g = |p: f64| win(p) - target;
    let (mut lo, mut hi) = (c, r);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentChecks {
    pub treatment: String,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<TreatmentChecks>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.checks.iter().all(|c| c.passed))
    }

    /// Pass/fail matrix, one line per treatment.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.checks.iter().map(|c| c.name.as_str()).collect())
            .unwrap_or_default();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(4).max(4);
        let _ = write!(out, "{:<width$}", "check");
        for row in &self.rows {
            let _ = write!(out, "  {:>8}", row.treatment);
        }
        out.push('\n');
        for (i, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:<width$}");
            for row in &self.rows {
                let mark = if row.checks[i].passed { "pass" } else { "FAIL" };
                let _ = write!(out, "  {mark:>8}");
            }
            out.push('\n');
        }
        for row in &self.rows {
            for c in row.checks.iter().filter(|c| !c.passed) {
                let _ = writeln!(out, "{} {}: {}", row.treatment, c.name, c.detail);
            }
        }
        out
    }
}

const MESH: usize = 10_000;

/// Runs the oracle suite for one parameter set.
pub fn verify_params(name: &str, params: &GameParams) -> Result<TreatmentChecks> {
    let eq = Equilibrium::solve(params)?;
    let mut checks = Vec::new();

    let bisected = threshold_by_bisection(params);
    let ok = bisected.is_some_and(|b| (b - eq.p_tilde).abs() < 1e-9);
    checks.push(CheckResult::new(
        "threshold",
        ok,
        format!("closed form {:.10}, bisection {:?}", eq.p_tilde, bisected),
    ));

    let residual = indifference_residual(params, MESH)?;
    checks.push(CheckResult::new(
        "indifference",
        residual < 1e-9 * eq.value.abs(),
        format!("residual {residual:.3e}, bound {:.3e}", 1e-9 * eq.value.abs()),
    ));

    let validity = cdf_validity(params, MESH)?;
    checks.push(CheckResult::new("cdf_validity", validity.passed(), format!("{validity:?}")));

    let (lo, hi) = eq.support();
    let mut worst_rt: f64 = 0.0;
    for k in 0..=1000 {
        let p = lo + (hi - lo) * k as f64 / 1000.0;
        worst_rt = worst_rt.max((eq.quantile(eq.cdf(p))? - p).abs());
    }
    checks.push(CheckResult::new(
        "quantile_round_trip",
        worst_rt < 1e-8,
        format!("max |Q(F(p)) - p| = {worst_rt:.3e}"),
    ));

    let grid = params.price_grid();
    let mut worst_q: f64 = 0.0;
    for &p in &grid {
        for seg in [Segment::High, Segment::Low] {
            let spec = params.demand_spec(seg)?;
            let report = best_quantity_discrete(params, &spec, p)?;
            let closed = optimal_quantity(params, p, seg)?;
            worst_q = worst_q.max(report.distance_to((closed + 0.5).floor()));
        }
    }
    checks.push(CheckResult::new(
        "quantity_oracle",
        worst_q <= 1.0,
        format!("max distance to brute-force argmax {worst_q}"),
    ));

    let mut worst_tie: f64 = 0.0;
    for &p in &grid {
        let report = best_tie_quantity_discrete(params, p)?;
        let rule = tie_optimal_quantity(params, p)?;
        let d = report.argmax.iter().map(|&a| rule.distance(a)).fold(f64::INFINITY, f64::min);
        worst_tie = worst_tie.max(d);
    }
    checks.push(CheckResult::new(
        "tie_oracle",
        worst_tie <= 1.0,
        format!("max distance to brute-force tie argmax {worst_tie:.3}"),
    ));

    let dominated = grid
        .iter()
        .filter(|&&p| p < eq.p_tilde)
        .all(|&p| eq.price_payoff(p) < eq.value);
    checks.push(CheckResult::new(
        "dominance",
        dominated,
        "every grid price below p_tilde earns less than V".into(),
    ));

    let fine: Vec<f64> = {
        let n = ((hi - lo) / 0.01).floor() as usize;
        (0..=n).map(|k| lo + 0.01 * k as f64).collect()
    };
    let cdf = |p: f64| eq.cdf(p);
    let br = best_price_response(params, &cdf, &fine)?;
    let spread = br.support_spread.unwrap_or(f64::INFINITY);
    checks.push(CheckResult::new(
        "best_response_flat",
        spread < 1e-6 * eq.value.abs(),
        format!("payoff spread over support {spread:.3e}"),
    ));

    let statics = comparative_statics(params);
    checks.push(CheckResult::new("comparative_statics", statics.passed(), statics.detail()));

    let rule = TieQuantityRule::new(params);
    let cont = crate::equilibrium::TieRegime::Middle;
    let continuity = match rule.situation {
        crate::equilibrium::TieSituation::Overlap => {
            let at1 = (rule.regime_value(crate::equilibrium::TieRegime::LowerInterior, rule.lower_boundary).midpoint()
                - rule.regime_value(cont, rule.lower_boundary).midpoint())
            .abs();
            let at2 = (rule.regime_value(cont, rule.upper_boundary).midpoint()
                - rule.regime_value(crate::equilibrium::TieRegime::UpperInterior, rule.upper_boundary).midpoint())
            .abs();
            at1.max(at2)
        }
        crate::equilibrium::TieSituation::NoOverlap => 0.0,
    };
    checks.push(CheckResult::new(
        "tie_continuity",
        continuity < 1e-9,
        format!("max boundary mismatch {continuity:.3e}"),
    ));

    Ok(TreatmentChecks {
        treatment: name.to_string(),
        checks,
    })
}

pub fn verify_all(treatments: &[Treatment]) -> Result<VerifyReport> {
    let rows = treatments
        .iter()
        .map(|t| verify_params(t.label.as_str(), &t.params))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport { rows })
}

/// Sign checks of the comparative statics in the demand half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsReport {
    pub threshold_decreasing: bool,
    pub cdf_dominance: bool,
    pub quantity_sign: bool,
    pub widths: Vec<f64>,
}

impl StaticsReport {
    pub fn passed(&self) -> bool {
        self.threshold_decreasing && self.cdf_dominance && self.quantity_sign
    }

    fn detail(&self) -> String {
        format!(
            "threshold decreasing {}, FOSD {}, dq*/dx sign {} over x in {:?}",
            self.threshold_decreasing, self.cdf_dominance, self.quantity_sign, self.widths
        )
    }
}

/// Varies the half-width over `{5, 10, ..., 40}` (capped at `d_L`) holding
/// everything else fixed.
pub fn comparative_statics(params: &GameParams) -> StaticsReport {
    let widths: Vec<f64> = (1..=8)
        .map(|k| 5.0 * k as f64)
        .filter(|&x| x <= params.demand_low)
        .collect();
    let solved: Vec<Equilibrium> = widths
        .iter()
        .filter_map(|&x| {
            let mut p = *params;
            p.half_width = x;
            p.q_cap = p.q_cap.max((p.demand_high + x).ceil() as u32);
            Equilibrium::solve(&p).ok()
        })
        .collect();
    let complete = solved.len() == widths.len();

    let threshold_decreasing = complete && solved.windows(2).all(|w| w[1].p_tilde < w[0].p_tilde);

    let mut cdf_dominance = complete;
    for i in 0..solved.len() {
        for j in (i + 1)..solved.len() {
            let lo = solved[i].p_tilde.max(solved[j].p_tilde);
            let hi = params.reserve;
            for k in 0..=200 {
                let p = lo + (hi - lo) * k as f64 / 200.0;
                if solved[j].cdf(p) < solved[i].cdf(p) - 1e-12 {
                    cdf_dominance = false;
                }
            }
        }
    }

    let h = 1e-3;
    let mut quantity_sign = true;
    for &p in &params.price_grid() {
        for &x in &widths {
            for seg in [Segment::High, Segment::Low] {
                let q = |w: f64| {
                    let mut pp = *params;
                    pp.half_width = w;
                    optimal_quantity(&pp, p, seg).expect("positive price")
                };
                let slope = (q(x + h) - q((x - h).max(0.0))) / (2.0 * h);
                let two_c = 2.0 * params.cost;
                let ok = if p > two_c + 1e-9 {
                    slope > 0.0
                } else if p < two_c - 1e-9 {
                    slope < 0.0
                } else {
                    slope.abs() < 1e-6
                };
                quantity_sign &= ok;
            }
        }
    }

    StaticsReport {
        threshold_decreasing,
        cdf_dominance,
        quantity_sign,
        widths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::TreatmentLabel;

    fn params(label: TreatmentLabel) -> GameParams {
        Treatment::preset(label).params
    }

    #[test]
    fn quantity_sweep_near_closed_form() {
        let p = params(TreatmentLabel::HmLu);
        let spec = DemandSpec::new(100, 20);
        let report = best_quantity_discrete(&p, &spec, 10.0).unwrap();
        assert!(report.argmax.iter().all(|q| (107.0..=109.0).contains(q)), "{:?}", report.argmax);
        assert!(report.distance_to(108.0) <= 1.0);
    }

    #[test]
    fn singleton_support_orders_demand() {
        let p = GameParams::new(3.0, 12.0, 100.0, 50.0, 0.0).unwrap();
        let spec = DemandSpec::new(100, 0);
        let report = best_quantity_discrete(&p, &spec, 10.0).unwrap();
        assert_eq!(report.argmax, vec![100.0]);
    }

    #[test]
    fn zero_margin_orders_nothing() {
        let p = params(TreatmentLabel::LmLu);
        let spec = DemandSpec::new(50, 20);
        let report = best_quantity_discrete(&p, &spec, 9.0).unwrap();
        assert_eq!(report.max_value, 0.0);
        assert_eq!(report.argmax[0], 0.0);
    }

    #[test]
    fn equilibrium_opponent_leaves_flat_payoff() {
        let p = params(TreatmentLabel::HmLu);
        let eq = Equilibrium::solve(&p).unwrap();
        let n = ((12.0 - eq.p_tilde) / 0.01).floor() as usize;
        let grid: Vec<f64> = (0..=n).map(|k| eq.p_tilde + 0.01 * k as f64).collect();
        let cdf = |x: f64| eq.cdf(x);
        let report = best_price_response(&p, &cdf, &grid).unwrap();
        assert!(report.support_spread.unwrap() < 1e-6 * eq.value);
        assert!((report.max_value - eq.value).abs() < 1e-9 * eq.value);
    }

    #[test]
    fn point_mass_at_reserve_is_undercut() {
        let p = params(TreatmentLabel::HmLu);
        let at_r = |x: f64| if x >= 12.0 { 1.0 } else { 0.0 };
        let report = best_price_response(&p, &at_r, &p.price_grid()).unwrap();
        assert_eq!(report.argmax.len(), 1);
        assert!(report.argmax[0] < 12.0);
    }

    #[test]
    fn dominated_prices_earn_less_than_value() {
        let p = params(TreatmentLabel::HmLu);
        let eq = Equilibrium::solve(&p).unwrap();
        let below: Vec<f64> = p.price_grid().into_iter().filter(|&x| x < eq.p_tilde).collect();
        let cdf = |x: f64| eq.cdf(x);
        let report = best_price_response(&p, &cdf, &below).unwrap();
        assert!(report.max_value < eq.value);
    }

    #[test]
    fn non_monotone_cdf_is_rejected() {
        let p = params(TreatmentLabel::HmLu);
        let bad = |x: f64| if x < 8.0 { 0.6 } else { 0.2 };
        assert!(matches!(
            best_price_response(&p, &bad, &p.price_grid()),
            Err(Error::InvalidCdf(_))
        ));
    }

    #[test]
    fn residual_examples() {
        let hm = params(TreatmentLabel::HmLu);
        assert!(indifference_residual(&hm, 10_000).unwrap() < 1e-9 * 405.0);
        let lm = params(TreatmentLabel::LmHu);
        assert!(indifference_residual(&lm, 10_000).unwrap() < 1e-9 * 60.0);
        for t in Treatment::all() {
            let v = crate::equilibrium::equilibrium_value(&t.params);
            assert!(indifference_residual(&t.params, 2).unwrap() < 1e-9 * v);
        }
        assert!(indifference_residual(&hm, 1).is_err());
    }

    #[test]
    fn cdf_validity_passes_for_all_treatments() {
        for t in Treatment::all() {
            assert!(cdf_validity(&t.params, 10_000).unwrap().passed(), "{}", t.label);
        }
        let p = params(TreatmentLabel::HmLu);
        let eq = Equilibrium::solve(&p).unwrap();
        assert!((eq.cdf(10.0) - 0.722857142857).abs() < 1e-9);
    }

    #[test]
    fn degenerate_segments_rejected_upstream() {
        assert!(GameParams::new(3.0, 12.0, 50.0, 50.0, 20.0).is_err());
    }

    #[test]
    fn suite_passes_on_presets() {
        let report = verify_all(&Treatment::all()).unwrap();
        assert!(report.passed(), "{}", report.render());
    }
}
