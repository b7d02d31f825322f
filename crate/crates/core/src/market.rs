//! Game parameters, treatments, demand segments and the profit primitives.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for grid membership and exact-boundary comparisons on prices.
pub const PRICE_EPS: f64 = 1e-9;

/// One market configuration: cost, reserve price, the two segment means,
/// the demand half-width and the experiment's decision grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    #[serde(rename = "c")]
    pub cost: f64,
    #[serde(rename = "r")]
    pub reserve: f64,
    #[serde(rename = "d_H")]
    pub demand_high: f64,
    #[serde(rename = "d_L")]
    pub demand_low: f64,
    #[serde(rename = "x")]
    pub half_width: f64,
    pub price_step: f64,
    pub q_cap: u32,
}

impl GameParams {
    /// Builds and validates a parameter set with the default order cap
    /// `d_H + x + 10`.
    pub fn new(cost: f64, reserve: f64, demand_high: f64, demand_low: f64, half_width: f64) -> Result<Self> {
        let q_cap = (demand_high + half_width + 10.0).ceil().max(0.0) as u32;
        let params = GameParams {
            cost,
            reserve,
            demand_high,
            demand_low,
            half_width,
            price_step: 0.1,
            q_cap,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_price_step(mut self, step: f64) -> Result<Self> {
        self.price_step = step;
        self.validate()?;
        Ok(self)
    }

    pub fn with_q_cap(mut self, q_cap: u32) -> Result<Self> {
        self.q_cap = q_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        let all = [
            self.cost,
            self.reserve,
            self.demand_high,
            self.demand_low,
            self.half_width,
            self.price_step,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if !(0.0 < self.cost && self.cost < self.reserve) {
            return bad(format!("need 0 < c < r, got c={} r={}", self.cost, self.reserve));
        }
        if !(0.0 < self.demand_low && self.demand_low < self.demand_high) {
            return bad(format!(
                "need 0 < d_L < d_H, got d_L={} d_H={}",
                self.demand_low, self.demand_high
            ));
        }
        if !(0.0 <= self.half_width && self.half_width <= self.demand_low) {
            return bad(format!("need 0 <= x <= d_L, got x={}", self.half_width));
        }
        if self.price_step <= 0.0 {
            return bad(format!("price_step must be positive, got {}", self.price_step));
        }
        if (self.q_cap as f64) < self.demand_high + self.half_width {
            return bad(format!(
                "q_cap {} is below the top of the high-demand support {}",
                self.q_cap,
                self.demand_high + self.half_width
            ));
        }
        Ok(())
    }

    pub fn segment_mean(&self, segment: Segment) -> f64 {
        match segment {
            Segment::High => self.demand_high,
            Segment::Low => self.demand_low,
        }
    }

    /// Integer demand support for a segment, as used in the experiment.
    pub fn demand_spec(&self, segment: Segment) -> Result<DemandSpec> {
        DemandSpec::from_real(self.segment_mean(segment), self.half_width)
    }

    /// Does `price` lie on the price grid inside `[c, r]`?
    pub fn is_grid_price(&self, price: f64) -> bool {
        if !price.is_finite() || price < self.cost - PRICE_EPS || price > self.reserve + PRICE_EPS {
            return false;
        }
        let ticks = price / self.price_step;
        (ticks - ticks.round()).abs() < 1e-6
    }

    /// Canonical float for a number of grid ticks.
    pub fn grid_value(&self, ticks: i64) -> f64 {
        let per_unit = 1.0 / self.price_step;
        if (per_unit - per_unit.round()).abs() < 1e-9 {
            ticks as f64 / per_unit.round()
        } else {
            ticks as f64 * self.price_step
        }
    }

    /// Smallest grid multiple `>= price`, not clamped.
    pub fn grid_ceil(&self, price: f64) -> f64 {
        self.grid_value((price / self.price_step - 1e-7).ceil() as i64)
    }

    /// Largest grid multiple `<= price`, not clamped.
    pub fn grid_floor(&self, price: f64) -> f64 {
        self.grid_value((price / self.price_step + 1e-7).floor() as i64)
    }

    /// Smallest grid price `>= price`, clamped to `[c, r]`.
    pub fn snap_up(&self, price: f64) -> f64 {
        self.clamp_to_range(self.grid_ceil(price))
    }

    /// Largest grid price `<= price`, clamped to `[c, r]`.
    pub fn snap_down(&self, price: f64) -> f64 {
        self.clamp_to_range(self.grid_floor(price))
    }

    /// Nearest grid price, clamped to `[c, r]`.
    pub fn snap_nearest(&self, price: f64) -> f64 {
        let ticks = (price / self.price_step).round() as i64;
        self.clamp_to_range(self.grid_value(ticks))
    }

    fn clamp_to_range(&self, price: f64) -> f64 {
        if price < self.cost {
            self.snap_up_exact(self.cost)
        } else if price > self.reserve {
            self.reserve
        } else {
            price
        }
    }

    fn snap_up_exact(&self, price: f64) -> f64 {
        self.grid_value((price / self.price_step - 1e-7).ceil() as i64)
    }

    /// All grid prices in `[c, r]`, ascending.
    pub fn price_grid(&self) -> Vec<f64> {
        let lo = (self.cost / self.price_step - 1e-7).ceil() as i64;
        let hi = (self.reserve / self.price_step + 1e-7).floor() as i64;
        (lo..=hi).map(|t| self.grid_value(t)).collect()
    }

    /// Parses a plain `key=value` preset. Recognised keys: `c`, `r`, `d_H`,
    /// `d_L`, `x`, `price_step`, `q_cap`. Blank lines and `#` comments are
    /// skipped; `price_step` and `q_cap` are optional.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut cost = None;
        let mut reserve = None;
        let mut high = None;
        let mut low = None;
        let mut width = None;
        let mut step = None;
        let mut cap = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let number = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Config {
                    line: line_no,
                    message: format!("{key}: not a number: {v:?}"),
                })
            };
            match key {
                "c" => cost = Some(number(value)?),
                "r" => reserve = Some(number(value)?),
                "d_H" => high = Some(number(value)?),
                "d_L" => low = Some(number(value)?),
                "x" => width = Some(number(value)?),
                "price_step" => step = Some(number(value)?),
                "q_cap" => {
                    cap = Some(value.parse::<u32>().map_err(|_| Error::Config {
                        line: line_no,
                        message: format!("q_cap: not a non-negative integer: {value:?}"),
                    })?)
                }
                other => {
                    return Err(Error::Config {
                        line: line_no,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config {
                line: 0,
                message: format!("missing required key {name}"),
            })
        };
        let mut params = GameParams {
            cost: need(cost, "c")?,
            reserve: need(reserve, "r")?,
            demand_high: need(high, "d_H")?,
            demand_low: need(low, "d_L")?,
            half_width: need(width, "x")?,
            price_step: 0.1,
            q_cap: 0,
        };
        params.q_cap = (params.demand_high + params.half_width + 10.0).ceil().max(0.0) as u32;
        if let Some(step) = step {
            params.price_step = step;
        }
        if let Some(cap) = cap {
            params.q_cap = cap;
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load_config(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_config(&text)
    }

    pub fn to_config(&self) -> String {
        format!(
            "c={}\nr={}\nd_H={}\nd_L={}\nx={}\nprice_step={}\nq_cap={}\n",
            self.cost,
            self.reserve,
            self.demand_high,
            self.demand_low,
            self.half_width,
            self.price_step,
            self.q_cap
        )
    }
}

/// The four cells of the 2x2 design: margin (HM/LM) by uncertainty (LU/HU).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TreatmentLabel {
    #[serde(rename = "HM_LU")]
    HmLu,
    #[serde(rename = "HM_HU")]
    HmHu,
    #[serde(rename = "LM_LU")]
    LmLu,
    #[serde(rename = "LM_HU")]
    LmHu,
}

impl TreatmentLabel {
    pub const ALL: [TreatmentLabel; 4] = [
        TreatmentLabel::HmLu,
        TreatmentLabel::HmHu,
        TreatmentLabel::LmLu,
        TreatmentLabel::LmHu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentLabel::HmLu => "HM_LU",
            TreatmentLabel::HmHu => "HM_HU",
            TreatmentLabel::LmLu => "LM_LU",
            TreatmentLabel::LmHu => "LM_HU",
        }
    }

    pub fn high_margin(self) -> bool {
        matches!(self, TreatmentLabel::HmLu | TreatmentLabel::HmHu)
    }

    pub fn high_uncertainty(self) -> bool {
        matches!(self, TreatmentLabel::HmHu | TreatmentLabel::LmHu)
    }

    fn base(self) -> (f64, f64) {
        let cost = if self.high_margin() { 3.0 } else { 9.0 };
        let width = if self.high_uncertainty() { 40.0 } else { 20.0 };
        (cost, width)
    }
}

impl fmt::Display for TreatmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreatmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "HM_LU" => Ok(TreatmentLabel::HmLu),
            "HM_HU" => Ok(TreatmentLabel::HmHu),
            "LM_LU" => Ok(TreatmentLabel::LmLu),
            "LM_HU" => Ok(TreatmentLabel::LmHu),
            _ => Err(Error::UnknownTreatment(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Treatment {
    pub label: TreatmentLabel,
    pub params: GameParams,
}

impl Treatment {
    pub const RESERVE: f64 = 12.0;
    pub const DEMAND_HIGH: f64 = 100.0;
    pub const DEMAND_LOW: f64 = 50.0;

    pub fn preset(label: TreatmentLabel) -> Self {
        let (cost, width) = label.base();
        let params = GameParams::new(cost, Self::RESERVE, Self::DEMAND_HIGH, Self::DEMAND_LOW, width)
            .expect("preset parameters are valid");
        Treatment { label, params }
    }

    pub fn all() -> Vec<Treatment> {
        TreatmentLabel::ALL.iter().map(|&l| Treatment::preset(l)).collect()
    }

    /// Pairs a label with explicit parameters; only the grid step and the
    /// order cap may differ from the preset.
    pub fn new(label: TreatmentLabel, params: GameParams) -> Result<Self> {
        params.validate()?;
        let preset = Treatment::preset(label).params;
        let same = |a: f64, b: f64| (a - b).abs() < 1e-12;
        if !(same(params.cost, preset.cost)
            && same(params.reserve, preset.reserve)
            && same(params.demand_high, preset.demand_high)
            && same(params.demand_low, preset.demand_low)
            && same(params.half_width, preset.half_width))
        {
            return Err(Error::InvalidParams(format!(
                "parameters do not match treatment {label}"
            )));
        }
        Ok(Treatment { label, params })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    High,
    Low,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::High => "high",
            Segment::Low => "low",
        }
    }

    pub fn other(self) -> Segment {
        match self {
            Segment::High => Segment::Low,
            Segment::Low => Segment::High,
        }
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "high" => Ok(Segment::High),
            "low" => Ok(Segment::Low),
            _ => Err(format!("unknown segment {s:?}")),
        }
    }
}

/// Result of the price comparison from one seller's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Lower,
    Higher,
    Tie,
}

impl OutcomeKind {
    pub fn compare(own: f64, other: f64) -> OutcomeKind {
        if (own - other).abs() < PRICE_EPS {
            OutcomeKind::Tie
        } else if own < other {
            OutcomeKind::Lower
        } else {
            OutcomeKind::Higher
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Lower => "lower",
            OutcomeKind::Higher => "higher",
            OutcomeKind::Tie => "tie",
        }
    }

    /// The segment a non-tie outcome determines.
    pub fn segment(self) -> Option<Segment> {
        match self {
            OutcomeKind::Lower => Some(Segment::High),
            OutcomeKind::Higher => Some(Segment::Low),
            OutcomeKind::Tie => None,
        }
    }
}

impl FromStr for OutcomeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lower" => Ok(OutcomeKind::Lower),
            "higher" => Ok(OutcomeKind::Higher),
            "tie" => Ok(OutcomeKind::Tie),
            _ => Err(format!("unknown outcome {s:?}")),
        }
    }
}

/// Price-competition outcome together with the segment actually served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceOutcome {
    pub kind: OutcomeKind,
    pub segment: Segment,
}

impl PriceOutcome {
    pub fn lower() -> Self {
        PriceOutcome {
            kind: OutcomeKind::Lower,
            segment: Segment::High,
        }
    }

    pub fn higher() -> Self {
        PriceOutcome {
            kind: OutcomeKind::Higher,
            segment: Segment::Low,
        }
    }

    pub fn tie(segment: Segment) -> Self {
        PriceOutcome {
            kind: OutcomeKind::Tie,
            segment,
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self.kind.segment() {
            Some(seg) => seg == self.segment,
            None => true,
        }
    }
}

/// Discrete uniform demand over the inclusive integer range `[mean - x, mean + x]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandSpec {
    pub mean: i64,
    pub half_width: i64,
}

impl DemandSpec {
    pub fn new(mean: i64, half_width: i64) -> Self {
        DemandSpec { mean, half_width }
    }

    pub fn from_real(mean: f64, half_width: f64) -> Result<Self> {
        let integral = |v: f64| (v - v.round()).abs() < 1e-9;
        if !integral(mean) || !integral(half_width) {
            return Err(Error::NonIntegralDemand { mean, half_width });
        }
        Ok(DemandSpec {
            mean: mean.round() as i64,
            half_width: half_width.round() as i64,
        })
    }

    pub fn support(&self) -> RangeInclusive<i64> {
        (self.mean - self.half_width)..=(self.mean + self.half_width)
    }

    pub fn cardinality(&self) -> usize {
        if self.half_width < 0 {
            0
        } else {
            (2 * self.half_width + 1) as usize
        }
    }

    pub fn contains(&self, demand: i64) -> bool {
        self.support().contains(&demand)
    }
}

/// Decimal scales tried, in order, when checking whether a value is an exact
/// decimal at token resolution.
const DECIMAL_SCALES: [f64; 3] = [10.0, 100.0, 1000.0];

fn as_scaled_int(v: f64, scale: f64) -> Option<i64> {
    let scaled = v * scale;
    let rounded = scaled.round();
    if (scaled - rounded).abs() < 1e-6 && rounded.abs() < 9.0e15 {
        Some(rounded as i64)
    } else {
        None
    }
}

fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() < 1e-9
}

/// Adds two token amounts, keeping the result an exact decimal when both
/// inputs are.
pub fn add_tokens(a: f64, b: f64) -> f64 {
    for scale in DECIMAL_SCALES {
        if let (Some(x), Some(y)) = (as_scaled_int(a, scale), as_scaled_int(b, scale)) {
            return (x + y) as f64 / scale;
        }
    }
    a + b
}

/// Rounds a token amount to the 0.1 reporting resolution.
pub fn round_tokens(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Realized round profit `p * min(q, d) - c * q`.
///
/// With integral quantity and demand and prices that are exact decimals,
/// the arithmetic is carried out on scaled integers so grid prices give
/// exact decimal profits.
pub fn realized_profit(price: f64, quantity: f64, demand: f64, cost: f64) -> f64 {
    let sold = quantity.min(demand);
    if is_integral(quantity) && is_integral(demand) {
        let q = quantity.round() as i64;
        let s = sold.round() as i64;
        for scale in DECIMAL_SCALES {
            if let (Some(p), Some(c)) = (as_scaled_int(price, scale), as_scaled_int(cost, scale)) {
                return (p * s - c * q) as f64 / scale;
            }
        }
    }
    price * sold - cost * quantity
}

/// Expected profit of ordering `quantity` at `price` when demand is
/// continuous uniform on `[mean - x, mean + x]`.
pub fn expected_profit_continuous(params: &GameParams, mean: f64, price: f64, quantity: f64) -> Result<f64> {
    let x = params.half_width;
    if x <= 0.0 {
        return Err(Error::ZeroHalfWidth);
    }
    let c = params.cost;
    let lo = mean - x;
    let hi = mean + x;
    let value = if quantity < lo {
        (price - c) * quantity
    } else if quantity > hi {
        price * mean - c * quantity
    } else {
        price * quantity * (hi - quantity) / (2.0 * x) + price * (quantity * quantity - lo * lo) / (4.0 * x)
            - c * quantity
    };
    Ok(value)
}

/// Upper bound on `|continuous - discrete|` expected profit at integer
/// orders: `p x / (2 (2x + 1))`.
pub fn discretization_bound(params: &GameParams, price: f64) -> f64 {
    let x = params.half_width;
    price * x / (2.0 * (2.0 * x + 1.0))
}

/// Exact expected profit over the integer demand support.
pub fn expected_profit_discrete(params: &GameParams, spec: &DemandSpec, price: f64, quantity: u32) -> Result<f64> {
    let n = spec.cardinality();
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    let q = quantity as i64;
    // sum over d of min(q, d), accumulated as an integer
    let sold: i64 = spec.support().map(|d| q.min(d.max(0))).sum();
    Ok((price * sold as f64 - params.cost * (q as f64) * n as f64) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm_lu() -> GameParams {
        Treatment::preset(TreatmentLabel::HmLu).params
    }

    #[test]
    fn instructions_payoff_example() {
        assert_eq!(realized_profit(11.5, 62.0, 59.0, 3.0), 492.5);
    }

    #[test]
    fn zero_order_and_full_sell_through() {
        assert_eq!(realized_profit(10.0, 0.0, 55.0, 3.0), 0.0);
        assert_eq!(realized_profit(10.0, 100.0, 120.0, 3.0), 700.0);
    }

    #[test]
    fn grid_prices_give_exact_decimal_profit() {
        // 10.3 * 59 - 9 * 62 = 49.7; naive float gives 49.70000000000005
        assert_eq!(realized_profit(10.3, 62.0, 59.0, 9.0), 49.7);
        assert_eq!(add_tokens(0.1, 0.2), 0.3);
    }

    #[test]
    fn continuous_expectation_regions() {
        let p = hm_lu();
        // q below the support: every unit sells
        assert_eq!(expected_profit_continuous(&p, 50.0, 10.0, 30.0).unwrap(), 210.0);
        // q above the support: sells the mean
        let v = expected_profit_continuous(&p, 50.0, 10.0, 80.0).unwrap();
        assert!((v - (500.0 - 240.0)).abs() < 1e-12);
    }

    #[test]
    fn continuous_expectation_at_optimum_matches_closed_form() {
        let p = hm_lu();
        // winner at p = r orders 110; closed form d_H p - d_H c - c x + c^2 x / p
        let v = expected_profit_continuous(&p, 100.0, 12.0, 110.0).unwrap();
        let closed = 100.0 * 12.0 - 100.0 * 3.0 - 3.0 * 20.0 + 9.0 * 20.0 / 12.0;
        assert!((v - closed).abs() < 1e-9);
        assert!((v - 855.0).abs() < 1e-9);
    }

    #[test]
    fn continuous_rejects_zero_width() {
        let p = GameParams::new(3.0, 12.0, 100.0, 50.0, 0.0).unwrap();
        assert!(matches!(
            expected_profit_continuous(&p, 100.0, 10.0, 100.0),
            Err(Error::ZeroHalfWidth)
        ));
    }

    #[test]
    fn discrete_expectation_examples() {
        let p = hm_lu();
        let high = DemandSpec::new(100, 20);
        assert_eq!(expected_profit_discrete(&p, &high, 10.0, 80).unwrap(), 560.0);

        let lm = Treatment::preset(TreatmentLabel::LmLu).params;
        let low = DemandSpec::new(50, 20);
        let brute: f64 = (30..=70).map(|d| 12.0 * (70.min(d) as f64)).sum::<f64>() / 41.0 - 630.0;
        let v = expected_profit_discrete(&lm, &low, 12.0, 70).unwrap();
        assert!((v - brute).abs() < 1e-9);

        // 41-point support vs the continuous uniform: 658 vs 656.976
        let cont = expected_profit_continuous(&p, 100.0, 10.0, 108.0).unwrap();
        let disc = expected_profit_discrete(&p, &high, 10.0, 108).unwrap();
        assert!((cont - 658.0).abs() < 1e-9);
        assert!((disc - (10.0 * (108.0 - 406.0 / 41.0) - 324.0)).abs() < 1e-9);
        assert!((cont - disc).abs() <= discretization_bound(&p, 10.0));
    }

    #[test]
    fn discrete_rejects_empty_support() {
        let p = hm_lu();
        let spec = DemandSpec::new(10, -1);
        assert!(matches!(
            expected_profit_discrete(&p, &spec, 10.0, 5),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn demand_spec_support() {
        let spec = hm_lu().demand_spec(Segment::High).unwrap();
        assert_eq!(spec.support(), 80..=120);
        assert_eq!(spec.cardinality(), 41);
        let hu = Treatment::preset(TreatmentLabel::HmHu).params;
        assert_eq!(hu.demand_spec(Segment::Low).unwrap().support(), 10..=90);
    }

    #[test]
    fn param_validation() {
        assert!(GameParams::new(12.0, 12.0, 100.0, 50.0, 20.0).is_err());
        assert!(GameParams::new(3.0, 12.0, 50.0, 50.0, 20.0).is_err());
        assert!(GameParams::new(3.0, 12.0, 100.0, 50.0, 60.0).is_err());
        assert!(hm_lu().with_q_cap(100).is_err());
        assert!(hm_lu().with_price_step(0.0).is_err());
        assert_eq!(hm_lu().q_cap, 130);
    }

    #[test]
    fn treatment_presets_match_design() {
        for t in Treatment::all() {
            let p = t.params;
            assert_eq!(p.reserve, 12.0);
            assert_eq!(p.demand_high, 100.0);
            assert_eq!(p.demand_low, 50.0);
            assert_eq!(p.cost, if t.label.high_margin() { 3.0 } else { 9.0 });
            assert_eq!(p.half_width, if t.label.high_uncertainty() { 40.0 } else { 20.0 });
        }
        let wrong = Treatment::preset(TreatmentLabel::HmLu).params;
        assert!(Treatment::new(TreatmentLabel::LmLu, wrong).is_err());
        assert!(Treatment::new(TreatmentLabel::HmLu, wrong.with_q_cap(150).unwrap()).is_ok());
    }

    #[test]
    fn label_round_trip() {
        for l in TreatmentLabel::ALL {
            assert_eq!(l.as_str().parse::<TreatmentLabel>().unwrap(), l);
        }
        assert!("XX_YY".parse::<TreatmentLabel>().is_err());
    }

    #[test]
    fn grid_helpers() {
        let p = hm_lu();
        assert!(p.is_grid_price(10.4));
        assert!(!p.is_grid_price(10.05));
        assert!(!p.is_grid_price(2.9));
        assert_eq!(p.snap_up(7.406986), 7.5);
        assert_eq!(p.snap_up(7.5), 7.5);
        assert_eq!(p.snap_down(9.6), 9.6);
        assert_eq!(p.price_grid().len(), 91);
        let lm = Treatment::preset(TreatmentLabel::LmLu).params;
        assert!(!lm.is_grid_price(8.5));
        assert_eq!(lm.price_grid().first(), Some(&9.0));
    }

    #[test]
    fn config_round_trip_and_errors() {
        let p = hm_lu().with_q_cap(150).unwrap();
        assert_eq!(GameParams::parse_config(&p.to_config()).unwrap(), p);
        let text = "# HM_LU\nc=3\nr=12\nd_H=100\nd_L=50\nx=20\n";
        assert_eq!(GameParams::parse_config(text).unwrap(), hm_lu());
        assert!(matches!(
            GameParams::parse_config("c=3\nfoo=1\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(GameParams::parse_config("c=3\nr=12\n").is_err());
    }
}
