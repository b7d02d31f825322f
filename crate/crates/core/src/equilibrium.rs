//! Closed-form subgame-perfect equilibrium of the price-then-quantity game.
//!
//! Stage 2 is a newsvendor problem once the segment is known; stage 1 is a
//! symmetric mixed strategy over `[p_tilde, r]` that leaves each seller
//! indifferent across its support.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{GameParams, OutcomeKind, Segment, PRICE_EPS};

const QUANTILE_TOL: f64 = 1e-10;

/// Sum `d_L r + (d_H - d_L) c + c^2 x / r`, the right-hand side of the
/// threshold condition.
fn threshold_rhs(params: &GameParams) -> f64 {
    let GameParams {
        cost: c,
        reserve: r,
        demand_high: dh,
        demand_low: dl,
        half_width: x,
        ..
    } = *params;
    dl * r + (dh - dl) * c + c * c * x / r
}

/// Lowest price in the equilibrium support: the price at which winning the
/// high segment pays as much as posting `r` and serving the low segment.
pub fn threshold_price(params: &GameParams) -> Result<f64> {
    let c = params.cost;
    let r = params.reserve;
    let dh = params.demand_high;
    let k = threshold_rhs(params);
    let cross = c * c * params.half_width;
    if cross == 0.0 {
        let root = k / dh;
        return if root > c && root < r {
            Ok(root)
        } else {
            Err(Error::NoThresholdRoot { cost: c, reserve: r })
        };
    }
    // d_H p^2 - K p + c^2 x = 0
    let disc = k * k - 4.0 * dh * cross;
    if disc < 0.0 {
        return Err(Error::NoThresholdRoot { cost: c, reserve: r });
    }
    let sq = disc.sqrt();
    let big = (k + sq) / (2.0 * dh);
    // product of roots is c^2 x / d_H; avoids cancellation in the small root
    let small = cross / (dh * big);
    [big, small]
        .into_iter()
        .find(|&p| p > c && p < r)
        .ok_or(Error::NoThresholdRoot { cost: c, reserve: r })
}

/// Constant equilibrium expected profit `V = d_L (r - c) - c x + c^2 x / r`.
pub fn equilibrium_value(params: &GameParams) -> f64 {
    let GameParams {
        cost: c,
        reserve: r,
        demand_low: dl,
        half_width: x,
        ..
    } = *params;
    dl * (r - c) - c * x + c * c * x / r
}

/// Integration constant of the price first-order condition, pinned by
/// `F(p_tilde) = 0`.
pub fn integration_constant(params: &GameParams) -> f64 {
    let spread = params.demand_high - params.demand_low;
    threshold_rhs(params) / spread
}

/// Expected stage-2 profit at the optimal order, conditional on the segment:
/// `d p - d c - c x + c^2 x / p`.
pub fn conditional_profit(params: &GameParams, price: f64, segment: Segment) -> f64 {
    let c = params.cost;
    let x = params.half_width;
    let d = params.segment_mean(segment);
    d * price - d * c - c * x + c * c * x / price
}

fn check_price(params: &GameParams, price: f64) -> Result<()> {
    if !price.is_finite() || price < params.cost - PRICE_EPS || price > params.reserve + PRICE_EPS {
        return Err(Error::PriceOutOfRange {
            price,
            lo: params.cost,
            hi: params.reserve,
        });
    }
    Ok(())
}

fn cdf_expression(params: &GameParams, p: f64) -> f64 {
    let c = params.cost;
    let r = params.reserve;
    let dl = params.demand_low;
    let x = params.half_width;
    let spread = params.demand_high - dl;
    1.0 - (r - p) * (dl - c * c * x / (p * r)) / ((p - c) * spread)
}

/// Equilibrium price CDF.
pub fn price_cdf(params: &GameParams, price: f64) -> Result<f64> {
    check_price(params, price)?;
    let p_tilde = threshold_price(params)?;
    Ok(cdf_with_threshold(params, p_tilde, price))
}

fn cdf_with_threshold(params: &GameParams, p_tilde: f64, price: f64) -> f64 {
    if price < p_tilde {
        0.0
    } else if price >= params.reserve {
        1.0
    } else {
        cdf_expression(params, price).clamp(0.0, 1.0)
    }
}

/// Inverse of the equilibrium CDF by bisection on `[p_tilde, r]`.
pub fn price_quantile(params: &GameParams, u: f64) -> Result<f64> {
    let p_tilde = threshold_price(params)?;
    quantile_with_threshold(params, p_tilde, u)
}

fn quantile_with_threshold(params: &GameParams, p_tilde: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::ProbabilityOutOfRange(u));
    }
    if u == 0.0 {
        return Ok(p_tilde);
    }
    if u == 1.0 {
        return Ok(params.reserve);
    }
    let mut lo = p_tilde;
    let mut hi = params.reserve;
    while hi - lo >= QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf_expression(params, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inverse-transform draw from the equilibrium price distribution. With
/// `snap_to_grid` the draw moves up to the next grid price, so the grid
/// distribution puts mass `F(g) - F(g - step)` on each grid point `g`.
pub fn sample_price<R: Rng + ?Sized>(params: &GameParams, rng: &mut R, snap_to_grid: bool) -> Result<f64> {
    let eq = Equilibrium::solve(params)?;
    Ok(eq.sample(rng, snap_to_grid))
}

/// Optimal order after the price stage: `d + (1 - 2c/p) x` for the segment
/// won (`High` after a lower price, `Low` after a higher one).
pub fn optimal_quantity(params: &GameParams, price: f64, segment: Segment) -> Result<f64> {
    if !(price > 0.0) || price > params.reserve + PRICE_EPS {
        return Err(Error::PriceOutOfRange {
            price,
            lo: 0.0,
            hi: params.reserve,
        });
    }
    Ok(params.segment_mean(segment) + (1.0 - 2.0 * params.cost / price) * params.half_width)
}

/// Optimal order for a price-competition outcome. Ties use the tie rule,
/// taking the midpoint where the optimum is an interval.
pub fn optimal_quantity_for(params: &GameParams, price: f64, outcome: OutcomeKind) -> Result<f64> {
    match outcome.segment() {
        Some(seg) => optimal_quantity(params, price, seg),
        None => Ok(tie_optimal_quantity(params, price)?.midpoint()),
    }
}

/// Rounds half-up to an integer order inside `[0, q_cap]`.
pub fn integer_order(quantity: f64, q_cap: u32) -> u32 {
    let q = (quantity + 0.5).floor();
    q.clamp(0.0, q_cap as f64) as u32
}

/// Optimal tie order: a point, or the whole optimal interval exactly at
/// `p = 2c` when the segment supports do not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TieQuantity {
    Point { q: f64 },
    Interval { lo: f64, hi: f64 },
}

impl TieQuantity {
    pub fn midpoint(&self) -> f64 {
        match *self {
            TieQuantity::Point { q } => q,
            TieQuantity::Interval { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn contains(&self, q: f64, tol: f64) -> bool {
        match *self {
            TieQuantity::Point { q: p } => (p - q).abs() <= tol,
            TieQuantity::Interval { lo, hi } => q >= lo - tol && q <= hi + tol,
        }
    }

    /// Distance from `q` to the optimal set.
    pub fn distance(&self, q: f64) -> f64 {
        match *self {
            TieQuantity::Point { q: p } => (p - q).abs(),
            TieQuantity::Interval { lo, hi } => {
                if q < lo {
                    lo - q
                } else if q > hi {
                    q - hi
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieSituation {
    NoOverlap,
    Overlap,
}

/// Which closed form applies at a tie price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRegime {
    /// `d_L + (3 - 4c/p) x`
    LowerInterior,
    /// `[d_L + x, d_H - x]`, only at `p = 2c` without overlap
    Plateau,
    /// `(d_H + d_L)/2 + (1 - 2c/p) x`, only with overlap
    Middle,
    /// `d_H + (1 - 4c/p) x`
    UpperInterior,
}

/// Piecewise tie rule with its regime boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieQuantityRule {
    pub situation: TieSituation,
    /// Below this price the lower-interior form applies.
    pub lower_boundary: f64,
    /// Above this price the upper-interior form applies.
    pub upper_boundary: f64,
    params: GameParams,
}

impl TieQuantityRule {
    pub fn new(params: &GameParams) -> Self {
        let c = params.cost;
        let x = params.half_width;
        let spread = params.demand_high - params.demand_low;
        if 2.0 * x <= spread {
            TieQuantityRule {
                situation: TieSituation::NoOverlap,
                lower_boundary: 2.0 * c,
                upper_boundary: 2.0 * c,
                params: *params,
            }
        } else {
            TieQuantityRule {
                situation: TieSituation::Overlap,
                lower_boundary: 4.0 * c * x / (4.0 * x - spread),
                upper_boundary: 4.0 * c * x / spread,
                params: *params,
            }
        }
    }

    pub fn regime(&self, price: f64) -> TieRegime {
        let tol = 1e-12 * self.upper_boundary.max(1.0);
        match self.situation {
            TieSituation::NoOverlap => {
                if (price - self.lower_boundary).abs() <= tol {
                    TieRegime::Plateau
                } else if price < self.lower_boundary {
                    TieRegime::LowerInterior
                } else {
                    TieRegime::UpperInterior
                }
            }
            TieSituation::Overlap => {
                if price < self.lower_boundary - tol {
                    TieRegime::LowerInterior
                } else if price <= self.upper_boundary + tol {
                    TieRegime::Middle
                } else {
                    TieRegime::UpperInterior
                }
            }
        }
    }

    /// Evaluates one regime's closed form at `price`, regardless of whether
    /// the regime applies there.
    pub fn regime_value(&self, regime: TieRegime, price: f64) -> TieQuantity {
        let p = &self.params;
        let c = p.cost;
        let x = p.half_width;
        match regime {
            TieRegime::LowerInterior => TieQuantity::Point {
                q: p.demand_low + (3.0 - 4.0 * c / price) * x,
            },
            TieRegime::Plateau => TieQuantity::Interval {
                lo: p.demand_low + x,
                hi: p.demand_high - x,
            },
            TieRegime::Middle => TieQuantity::Point {
                q: 0.5 * (p.demand_high + p.demand_low) + (1.0 - 2.0 * c / price) * x,
            },
            TieRegime::UpperInterior => TieQuantity::Point {
                q: p.demand_high + (1.0 - 4.0 * c / price) * x,
            },
        }
    }

    pub fn quantity(&self, price: f64) -> TieQuantity {
        self.regime_value(self.regime(price), price)
    }
}

/// Optimal order when both sellers post the same price and the segment is
/// an equal-odds lottery.
pub fn tie_optimal_quantity(params: &GameParams, price: f64) -> Result<TieQuantity> {
    check_price(params, price)?;
    Ok(TieQuantityRule::new(params).quantity(price))
}

/// A solved game: threshold, value and the distribution over prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub params: GameParams,
    pub p_tilde: f64,
    pub value: f64,
}

impl Equilibrium {
    pub fn solve(params: &GameParams) -> Result<Self> {
        params.validate()?;
        Ok(Equilibrium {
            params: *params,
            p_tilde: threshold_price(params)?,
            value: equilibrium_value(params),
        })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.p_tilde, self.params.reserve)
    }

    /// First grid price inside the support.
    pub fn grid_support_start(&self) -> f64 {
        self.params.snap_up(self.p_tilde)
    }

    pub fn integration_constant(&self) -> f64 {
        integration_constant(&self.params)
    }

    /// CDF for any real price; 0 below the support and 1 at or above `r`.
    pub fn cdf(&self, price: f64) -> f64 {
        cdf_with_threshold(&self.params, self.p_tilde, price)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        quantile_with_threshold(&self.params, self.p_tilde, u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, snap_to_grid: bool) -> f64 {
        let u: f64 = rng.gen();
        let p = quantile_with_threshold(&self.params, self.p_tilde, u).expect("u drawn from [0, 1)");
        if snap_to_grid {
            self.params.snap_up(p)
        } else {
            p
        }
    }

    /// Seller's expected profit from posting `price` against the equilibrium
    /// opponent with optimal stage-2 orders.
    pub fn price_payoff(&self, price: f64) -> f64 {
        let f = self.cdf(price);
        f * conditional_profit(&self.params, price, Segment::Low)
            + (1.0 - f) * conditional_profit(&self.params, price, Segment::High)
    }

    pub fn summary(&self) -> Result<NeSummary> {
        let q1 = self.quantile(0.25)?;
        let median = self.quantile(0.5)?;
        let q3 = self.quantile(0.75)?;
        Ok(NeSummary {
            p_tilde: self.p_tilde,
            grid_support_start: self.grid_support_start(),
            value: self.value,
            integration_constant: self.integration_constant(),
            q1,
            median,
            q3,
            iqr: q3 - q1,
        })
    }
}

/// Headline numbers of a solved treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeSummary {
    pub p_tilde: f64,
    pub grid_support_start: f64,
    pub value: f64,
    pub integration_constant: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
}

pub fn ne_summary(params: &GameParams) -> Result<NeSummary> {
    Equilibrium::solve(params)?.summary()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Treatment, TreatmentLabel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(label: TreatmentLabel) -> GameParams {
        Treatment::preset(label).params
    }

    /// Larger root by the textbook quadratic formula.
    fn quadratic_oracle(p: &GameParams) -> f64 {
        let (c, r, dh, dl, x) = (p.cost, p.reserve, p.demand_high, p.demand_low, p.half_width);
        let b = -(dl * r + (dh - dl) * c + c * c * x / r);
        let a = dh;
        let cc = c * c * x;
        (-b + (b * b - 4.0 * a * cc).sqrt()) / (2.0 * a)
    }

    #[test]
    fn threshold_examples() {
        let hm_lu = threshold_price(&params(TreatmentLabel::HmLu)).unwrap();
        assert!((hm_lu - 7.40712).abs() < 1e-3);
        assert!((hm_lu - quadratic_oracle(&params(TreatmentLabel::HmLu))).abs() < 1e-12);
        let lm_hu = threshold_price(&params(TreatmentLabel::LmHu)).unwrap();
        assert!((lm_hu - 9.94066).abs() < 1e-4);
        let degenerate = GameParams::new(3.0, 12.0, 100.0, 50.0, 0.0).unwrap();
        assert_eq!(threshold_price(&degenerate).unwrap(), 7.5);
    }

    #[test]
    fn threshold_other_root_is_below_cost() {
        for t in Treatment::all() {
            let p = t.params;
            let k = threshold_rhs(&p);
            let big = quadratic_oracle(&p);
            let small = p.cost * p.cost * p.half_width / (p.demand_high * big);
            assert!(small < p.cost, "{}: {small}", t.label);
            assert!((p.demand_high * big * big - k * big + p.cost * p.cost * p.half_width).abs() < 1e-8);
        }
    }

    #[test]
    fn cdf_examples() {
        let p = params(TreatmentLabel::HmLu);
        assert_eq!(price_cdf(&p, 12.0).unwrap(), 1.0);
        let pt = threshold_price(&p).unwrap();
        assert!(price_cdf(&p, pt).unwrap().abs() < 1e-9);
        assert!(cdf_expression(&p, pt).abs() < 1e-9);
        let by_hand = 1.0 - (2.0 * (50.0 - 180.0 / 120.0)) / (7.0 * 50.0);
        assert!((price_cdf(&p, 10.0).unwrap() - by_hand).abs() < 1e-12);
        assert!((by_hand - 0.722857).abs() < 1e-6);
        assert!(price_cdf(&p, 2.0).is_err());
        assert!(price_cdf(&p, 12.5).is_err());
        assert_eq!(price_cdf(&p, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn quantile_examples() {
        let hm = params(TreatmentLabel::HmLu);
        assert!((price_quantile(&hm, 0.5).unwrap() - 8.931).abs() < 0.005);
        let lm = params(TreatmentLabel::LmHu);
        assert!((price_quantile(&lm, 0.5).unwrap() - 10.476).abs() < 0.005);
        assert_eq!(price_quantile(&lm, 1.0).unwrap(), 12.0);
        assert_eq!(price_quantile(&lm, 0.0).unwrap(), threshold_price(&lm).unwrap());
        assert!(price_quantile(&lm, 1.5).is_err());
        assert!(price_quantile(&lm, -0.1).is_err());
    }

    #[test]
    fn sampling_is_replayable_and_in_support() {
        let p = params(TreatmentLabel::HmLu);
        let eq = Equilibrium::solve(&p).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100).map(|_| eq.sample(&mut a, false)).collect();
        let ys: Vec<f64> = (0..100).map(|_| sample_price(&p, &mut b, false).unwrap()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|&x| x >= eq.p_tilde - 1e-9 && x <= 12.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = eq.sample(&mut rng, true);
            assert!(p.is_grid_price(s));
            assert!(s >= 7.5);
        }
    }

    #[test]
    fn optimal_quantity_examples() {
        let p = params(TreatmentLabel::HmLu);
        assert!((optimal_quantity(&p, 10.0, Segment::High).unwrap() - 108.0).abs() < 1e-12);
        assert!((optimal_quantity(&p, 10.0, Segment::Low).unwrap() - 58.0).abs() < 1e-12);
        for t in Treatment::all() {
            let c = t.params.cost;
            if 2.0 * c <= t.params.reserve {
                assert_eq!(optimal_quantity(&t.params, 2.0 * c, Segment::High).unwrap(), 100.0);
                assert_eq!(optimal_quantity(&t.params, 2.0 * c, Segment::Low).unwrap(), 50.0);
            }
        }
        assert!(optimal_quantity(&p, 0.0, Segment::High).is_err());
        assert!(optimal_quantity(&p, -1.0, Segment::High).is_err());
    }

    #[test]
    fn tie_rule_examples() {
        let lm_lu = params(TreatmentLabel::LmLu);
        assert_eq!(tie_optimal_quantity(&lm_lu, 10.0).unwrap(), TieQuantity::Point { q: 38.0 });
        let hm_hu = params(TreatmentLabel::HmHu);
        assert_eq!(tie_optimal_quantity(&hm_hu, 8.0).unwrap(), TieQuantity::Point { q: 85.0 });
        let rule = TieQuantityRule::new(&hm_hu);
        assert_eq!(rule.situation, TieSituation::Overlap);
        assert!((rule.upper_boundary - 9.6).abs() < 1e-12);
        let mid = rule.regime_value(TieRegime::Middle, 9.6).midpoint();
        let up = rule.regime_value(TieRegime::UpperInterior, 9.6).midpoint();
        assert!((mid - 90.0).abs() < 1e-9 && (up - 90.0).abs() < 1e-9);
        assert!(tie_optimal_quantity(&hm_hu, 2.0).is_err());
    }

    #[test]
    fn tie_plateau_at_twice_cost() {
        let hm_lu = params(TreatmentLabel::HmLu);
        let q = tie_optimal_quantity(&hm_lu, 6.0).unwrap();
        assert_eq!(q, TieQuantity::Interval { lo: 70.0, hi: 80.0 });
        assert_eq!(q.midpoint(), 75.0);
        assert_eq!(optimal_quantity_for(&hm_lu, 6.0, OutcomeKind::Tie).unwrap(), 75.0);
    }

    #[test]
    fn tie_overlap_boundaries_are_continuous() {
        for t in Treatment::all() {
            let rule = TieQuantityRule::new(&t.params);
            if rule.situation != TieSituation::Overlap {
                continue;
            }
            let (b1, b2) = (rule.lower_boundary, rule.upper_boundary);
            let lo = rule.regime_value(TieRegime::LowerInterior, b1).midpoint();
            let mid1 = rule.regime_value(TieRegime::Middle, b1).midpoint();
            let mid2 = rule.regime_value(TieRegime::Middle, b2).midpoint();
            let up = rule.regime_value(TieRegime::UpperInterior, b2).midpoint();
            let p = t.params;
            assert!((lo - mid1).abs() < 1e-9 && (lo - (p.demand_high - p.half_width)).abs() < 1e-9);
            assert!((mid2 - up).abs() < 1e-9 && (up - (p.demand_low + p.half_width)).abs() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_value_examples() {
        assert!((equilibrium_value(&params(TreatmentLabel::HmLu)) - 405.0).abs() < 1e-12);
        assert!((equilibrium_value(&params(TreatmentLabel::LmHu)) - 60.0).abs() < 1e-12);
        let degenerate = GameParams::new(3.0, 12.0, 100.0, 50.0, 0.0).unwrap();
        assert_eq!(equilibrium_value(&degenerate), 50.0 * 9.0);
    }

    #[test]
    fn summary_matches_reference_quantiles() {
        let cases = [
            (TreatmentLabel::HmLu, 8.931, 2.097),
            (TreatmentLabel::HmHu, 8.858, 2.141),
            (TreatmentLabel::LmLu, 10.800, 0.765),
        ];
        for (label, median, iqr) in cases {
            let s = ne_summary(&params(label)).unwrap();
            assert!((s.median - median).abs() < 0.005, "{label}");
            assert!((s.iqr - iqr).abs() < 0.005, "{label}");
        }
    }

    #[test]
    fn integration_constant_pins_threshold() {
        for t in Treatment::all() {
            let eq = Equilibrium::solve(&t.params).unwrap();
            let p = t.params;
            let spread = p.demand_high - p.demand_low;
            let k = eq.integration_constant();
            let at = |q: f64| p.demand_high / spread * q + p.cost * p.cost * p.half_width / (q * spread) - k;
            assert!(at(eq.p_tilde).abs() < 1e-9);
            // F(p)(p - c) reproduces the CDF inside the support
            let q = 0.5 * (eq.p_tilde + p.reserve);
            assert!((at(q) / (q - p.cost) - eq.cdf(q)).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_order_rounds_half_up() {
        assert_eq!(integer_order(104.5, 130), 105);
        assert_eq!(integer_order(104.49, 130), 104);
        assert_eq!(integer_order(-3.0, 130), 0);
        assert_eq!(integer_order(500.0, 130), 130);
    }
}
