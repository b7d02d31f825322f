//! Sequential duopoly newsvendor game: sellers post prices, learn which
//! demand segment they won, then order stock against uniform demand.
//!
//! The crate covers the closed-form equilibrium, brute-force oracles for it,
//! an agent-based session engine that mirrors the laboratory protocol, and
//! the descriptive statistics used to compare play against the benchmark.

pub mod error;
pub mod market;
pub mod equilibrium;
pub mod table;
pub mod oracle;
pub mod simulation;
pub mod analysis;
pub mod protocol;

pub use error::{Error, Result};
pub use market::{
    expected_profit_continuous, expected_profit_discrete, realized_profit, DemandSpec, GameParams,
    OutcomeKind, PriceOutcome, Segment, Treatment, TreatmentLabel,
};
pub use equilibrium::{Equilibrium, NeSummary, TieQuantity};
