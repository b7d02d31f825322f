use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{integer_order, optimal_quantity_for, Equilibrium};
use crate::error::{Error, Result};
use crate::market::{OutcomeKind, Segment};
use crate::simulation::log::RoundRecord;

/// Behavioral decision rule for one seat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentPolicy {
    /// Draws prices from the equilibrium CDF and orders optimally.
    Equilibrium {
        #[serde(default = "default_true")]
        snap_to_grid: bool,
    },
    /// Posts the reserve price with probability `phi`, otherwise plays like
    /// `Equilibrium`.
    Focal {
        phi: f64,
        #[serde(default = "default_true")]
        snap_to_grid: bool,
    },
    /// Prices like `Equilibrium`; orders `lambda * mean + (1 - lambda) * q*`.
    PullToCenter {
        lambda: f64,
        /// Optional integer-uniform jitter of +-`jitter` units on the order.
        #[serde(default)]
        jitter: u32,
        #[serde(default = "default_true")]
        snap_to_grid: bool,
    },
    /// Raises the price by `up` after winning the low-price contest, lowers
    /// it by `down` after losing, keeps it after a tie.
    Directional {
        up: f64,
        down: f64,
        /// Opening price; the equilibrium median when absent.
        #[serde(default)]
        initial: Option<f64>,
    },
    /// Decisions supplied from outside the engine (a human seat).
    External { channel: String },
}

fn default_true() -> bool {
    true
}

impl Default for AgentPolicy {
    fn default() -> Self {
        AgentPolicy::Equilibrium { snap_to_grid: true }
    }
}

impl AgentPolicy {
    pub fn directional_default() -> Self {
        AgentPolicy::Directional {
            up: 0.4,
            down: 0.5,
            initial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SessionSetup(m));
        match *self {
            AgentPolicy::Focal { phi, .. } if !(0.0..=1.0).contains(&phi) => bad(format!("focal phi {phi} outside [0, 1]")),
            AgentPolicy::PullToCenter { lambda, .. } if !(0.0..=1.0).contains(&lambda) => {
                bad(format!("pull-to-center lambda {lambda} outside [0, 1]"))
            }
            AgentPolicy::Directional { up, down, .. } if !(up >= 0.0 && down >= 0.0) => {
                bad(format!("directional steps must be non-negative, got up={up} down={down}"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, AgentPolicy::External { .. })
    }

    /// Stage-1 price. `history` holds this seat's own past records, oldest
    /// first.
    pub fn decide_price<R: Rng + ?Sized>(&self, eq: &Equilibrium, history: &[RoundRecord], rng: &mut R) -> Result<f64> {
        let params = &eq.params;
        match *self {
            AgentPolicy::Equilibrium { snap_to_grid } | AgentPolicy::PullToCenter { snap_to_grid, .. } => {
                Ok(eq.sample(rng, snap_to_grid))
            }
            AgentPolicy::Focal { phi, snap_to_grid } => {
                // always consume the coin so the stream does not depend on phi
                let coin: f64 = rng.gen();
                if coin < phi {
                    Ok(params.reserve)
                } else {
                    Ok(eq.sample(rng, snap_to_grid))
                }
            }
            AgentPolicy::Directional { up, down, initial } => {
                let next = match history.last() {
                    None => match initial {
                        Some(p) => p,
                        None => eq.quantile(0.5)?,
                    },
                    Some(last) => match last.outcome.kind {
                        OutcomeKind::Lower => last.price + up,
                        OutcomeKind::Higher => last.price - down,
                        OutcomeKind::Tie => last.price,
                    },
                };
                Ok(params.snap_nearest(next.clamp(params.cost, params.reserve)))
            }
            AgentPolicy::External { ref channel } => Err(Error::Protocol(format!(
                "external seat {channel:?} has no input channel attached"
            ))),
        }
    }

    /// Stage-2 order. On a tie the segment is still a coin flip from the
    /// seller's point of view, so ties use the tie rule and, for the
    /// anchoring rule, the midpoint of the two segment means.
    pub fn decide_quantity<R: Rng + ?Sized>(&self, eq: &Equilibrium, price: f64, outcome: OutcomeKind, rng: &mut R) -> Result<u32> {
        let params = &eq.params;
        let optimal = optimal_quantity_for(params, price, outcome)?;
        match *self {
            AgentPolicy::Equilibrium { .. } | AgentPolicy::Focal { .. } | AgentPolicy::Directional { .. } => {
                Ok(integer_order(optimal, params.q_cap))
            }
            AgentPolicy::PullToCenter { lambda, jitter, .. } => {
                let anchor = match outcome.segment() {
                    Some(Segment::High) => params.demand_high,
                    Some(Segment::Low) => params.demand_low,
                    None => 0.5 * (params.demand_high + params.demand_low),
                };
                let blended = lambda * anchor + (1.0 - lambda) * optimal;
                let base = integer_order(blended, params.q_cap) as i64;
                let shift = if jitter > 0 {
                    rng.gen_range(-(jitter as i64)..=jitter as i64)
                } else {
                    0
                };
                Ok((base + shift).clamp(0, params.q_cap as i64) as u32)
            }
            AgentPolicy::External { ref channel } => Err(Error::Protocol(format!(
                "external seat {channel:?} has no input channel attached"
            ))),
        }
    }
}
