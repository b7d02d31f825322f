//! Agent policies and the session engine that runs them through the
//! laboratory protocol: fixed groups of four, a fresh random pairing every
//! round, prices first, orders second.

pub mod engine;
pub mod log;
pub mod policy;

pub use engine::{
    run_session, run_session_with, ChannelInputs, EngineStage, ExternalInputs, InputReply, InputRequest, NoExternal,
    SeatRound, SessionConfig, SessionEngine,
};
pub use log::{RoundRecord, SessionLog, Substitution, CSV_COLUMNS, GROUP_SIZE};
pub use policy::AgentPolicy;
