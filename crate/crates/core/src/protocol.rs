//! JSON bodies exchanged with the live-session service.

use serde::{Deserialize, Serialize};

use crate::market::{GameParams, OutcomeKind, Segment, TreatmentLabel};
use crate::simulation::{AgentPolicy, RoundRecord, SessionLog};

pub const DEFAULT_STAGE_TIMEOUT_SECS: f64 = 20.0;
pub const DEFAULT_DISPLAY_SECS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub treatment: TreatmentLabel,
    /// Seats occupied by people; they take seat ids `0..humans`.
    pub humans: usize,
    /// Policies for the remaining seats, in seat order.
    #[serde(default)]
    pub bots: Vec<AgentPolicy>,
    pub n_rounds: u32,
    pub seed: u64,
    #[serde(default = "default_stage_timeout")]
    pub stage_timeout_secs: f64,
    /// How long the segment reveal and the round feedback stay up before the
    /// next input stage opens on its own.
    #[serde(default = "default_display")]
    pub display_secs: f64,
}

fn default_stage_timeout() -> f64 {
    DEFAULT_STAGE_TIMEOUT_SECS
}

fn default_display() -> f64 {
    DEFAULT_DISPLAY_SECS
}

impl CreateSession {
    pub fn new(treatment: TreatmentLabel, humans: usize, bots: Vec<AgentPolicy>, n_rounds: u32, seed: u64) -> Self {
        CreateSession {
            treatment,
            humans,
            bots,
            n_rounds,
            seed,
            stage_timeout_secs: DEFAULT_STAGE_TIMEOUT_SECS,
            display_secs: DEFAULT_DISPLAY_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub treatment: TreatmentLabel,
    pub params: GameParams,
    pub seats: usize,
    pub humans: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinRequest {
    /// A specific human seat; the lowest free one when absent.
    #[serde(default)]
    pub seat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joined {
    pub token: String,
    pub subject: usize,
    pub view: StateView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitPrice {
    pub token: String,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitQuantity {
    pub token: String,
    pub quantity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum LiveStage {
    Lobby,
    Price { round: u32 },
    SegmentReveal { round: u32 },
    Quantity { round: u32 },
    Feedback { round: u32 },
    Finished,
}

impl LiveStage {
    pub fn round(self) -> Option<u32> {
        match self {
            LiveStage::Price { round }
            | LiveStage::SegmentReveal { round }
            | LiveStage::Quantity { round }
            | LiveStage::Feedback { round } => Some(round),
            LiveStage::Lobby | LiveStage::Finished => None,
        }
    }
}

/// What the opponent did, shown with the round feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpponentRound {
    pub price: f64,
    pub quantity: u32,
    pub profit: f64,
}

/// The seat's view of the round in progress. Fields stay empty until the
/// protocol reveals them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentRound {
    pub round: u32,
    pub price: Option<f64>,
    pub opp_price: Option<f64>,
    pub outcome: Option<OutcomeKind>,
    /// Served segment; withheld at a tie until feedback.
    pub segment: Option<Segment>,
    pub demand_range: Option<(i64, i64)>,
    pub quantity: Option<u32>,
    /// The finished record, at feedback only.
    pub record: Option<RoundRecord>,
    pub opponent: Option<OpponentRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub treatment: TreatmentLabel,
    pub params: GameParams,
    pub subject: usize,
    pub n_rounds: u32,
    #[serde(flatten)]
    pub stage: LiveStage,
    /// Milliseconds until the stage closes on its own.
    pub deadline_ms: Option<u64>,
    /// This seat still owes an input in the open stage.
    pub awaiting_input: bool,
    /// Seats (people or bots) the stage is still waiting on.
    pub waiting_on: usize,
    pub current: Option<CurrentRound>,
    /// Own completed rounds.
    pub history: Vec<RoundRecord>,
    pub cumulative: f64,
}

/// One accepted human input, in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Price {
        round: u32,
        subject: usize,
        price: f64,
        substituted: bool,
    },
    Quantity {
        round: u32,
        subject: usize,
        quantity: u32,
        substituted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub log: SessionLog,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    InvalidConfig,
    UnknownSession,
    UnknownToken,
    SeatTaken,
    NoFreeSeat,
    WrongStage,
    DuplicateSubmission,
    OffGrid,
    PriceOutOfRange,
    QuantityOutOfRange,
    NotFinished,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}
