use duopoly_core::protocol::{
    CreateSession, CurrentRound, ErrorCode, LiveStage, OpponentRound, SessionRecord, StateView, TranscriptEntry,
};
use duopoly_core::simulation::{AgentPolicy, EngineStage, RoundRecord, SessionConfig, SessionEngine, SessionLog};
use duopoly_core::{OutcomeKind, Treatment};
use tokio::time::{Duration, Instant};

use crate::error::ApiError;

/// One session being played over HTTP: the engine plus the display stages,
/// seat tokens and deadlines around it.
#[derive(Debug)]
pub struct LiveSession {
    id: String,
    engine: SessionEngine,
    humans: usize,
    tokens: Vec<Option<String>>,
    stage: LiveStage,
    deadline: Option<Instant>,
    stage_timeout: Duration,
    display: Duration,
    transcript: Vec<TranscriptEntry>,
    persisted: bool,
}

fn seconds(value: f64, what: &str, allow_zero: bool) -> Result<Duration, ApiError> {
    let ok = value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0)) && value < 86_400.0;
    if !ok {
        return Err(ApiError::new(ErrorCode::InvalidConfig, format!("{what} must be a positive number of seconds, got {value}")));
    }
    Ok(Duration::from_secs_f64(value))
}

impl LiveSession {
    pub fn create(id: String, req: &CreateSession) -> Result<Self, ApiError> {
        if req.humans == 0 {
            return Err(ApiError::new(
                ErrorCode::InvalidConfig,
                "a live session needs at least one human seat; run bot-only sessions through the simulator",
            ));
        }
        if req.bots.iter().any(|p| matches!(p, AgentPolicy::External { .. })) {
            return Err(ApiError::new(ErrorCode::InvalidConfig, "bot seats cannot use the external policy"));
        }
        let stage_timeout = seconds(req.stage_timeout_secs, "stage_timeout_secs", false)?;
        let display = seconds(req.display_secs, "display_secs", true)?;
        let mut policies: Vec<AgentPolicy> = (0..req.humans)
            .map(|i| AgentPolicy::External {
                channel: format!("seat-{i}"),
            })
            .collect();
        policies.extend(req.bots.iter().cloned());
        let config = SessionConfig {
            treatment: Treatment::preset(req.treatment),
            policies,
            n_rounds: req.n_rounds,
            seed: req.seed,
        };
        let engine = SessionEngine::new(config).map_err(|e| ApiError::new(ErrorCode::InvalidConfig, e.to_string()))?;
        Ok(LiveSession {
            id,
            engine,
            humans: req.humans,
            tokens: vec![None; req.humans],
            stage: LiveStage::Lobby,
            deadline: None,
            stage_timeout,
            display,
            transcript: Vec::new(),
            persisted: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn stage(&self) -> LiveStage {
        self.stage
    }

    pub fn deadline(&self) -> Option<Instant> {
        self.deadline
    }

    pub fn config(&self) -> &SessionConfig {
        self.engine.config()
    }

    pub fn n_seats(&self) -> usize {
        self.engine.n_subjects()
    }

    pub fn humans(&self) -> usize {
        self.humans
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn is_finished(&self) -> bool {
        self.stage == LiveStage::Finished
    }

    /// Claims a human seat and returns its token. The first round opens once
    /// the last seat is taken.
    pub fn join(&mut self, seat: Option<usize>, token: String, now: Instant) -> Result<usize, ApiError> {
        let subject = match seat {
            Some(s) if s >= self.humans => {
                return Err(ApiError::new(ErrorCode::BadRequest, format!("seat {s} is not a human seat (0..{})", self.humans)));
            }
            Some(s) if self.tokens[s].is_some() => {
                return Err(ApiError::new(ErrorCode::SeatTaken, format!("seat {s} is already taken")));
            }
            Some(s) => s,
            None => self
                .tokens
                .iter()
                .position(Option::is_none)
                .ok_or_else(|| ApiError::new(ErrorCode::NoFreeSeat, "every human seat is taken"))?,
        };
        self.tokens[subject] = Some(token);
        if self.stage == LiveStage::Lobby && self.tokens.iter().all(Option::is_some) {
            self.enter(LiveStage::Price { round: 1 }, now);
        }
        Ok(subject)
    }

    pub fn subject_for(&self, token: &str) -> Result<usize, ApiError> {
        self.tokens
            .iter()
            .position(|t| t.as_deref() == Some(token))
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownToken, "token does not belong to this session"))
    }

    pub fn submit_price(&mut self, subject: usize, price: f64, now: Instant) -> Result<(), ApiError> {
        if let LiveStage::Feedback { round } = self.stage {
            if round < self.engine.config().n_rounds {
                self.enter(LiveStage::Price { round: round + 1 }, now);
            }
        }
        let LiveStage::Price { round } = self.stage else {
            return Err(self.wrong_stage("price"));
        };
        let seat = self.engine.seat_round(subject).expect("price stage has an open round");
        if seat.price.is_some() {
            return Err(ApiError::new(ErrorCode::DuplicateSubmission, format!("price for round {round} already submitted")));
        }
        let params = self.engine.params();
        if !price.is_finite() || price < params.cost - 1e-9 || price > params.reserve + 1e-9 {
            return Err(ApiError::new(
                ErrorCode::PriceOutOfRange,
                format!("price {price} outside [{}, {}]", params.cost, params.reserve),
            ));
        }
        if !params.is_grid_price(price) {
            return Err(ApiError::new(
                ErrorCode::OffGrid,
                format!("price {price} is not a multiple of {}", params.price_step),
            ));
        }
        self.engine.submit_price(subject, price, false).map_err(ApiError::internal)?;
        let price = self.engine.seat_round(subject).and_then(|s| s.price).unwrap_or(price);
        self.transcript.push(TranscriptEntry::Price {
            round,
            subject,
            price,
            substituted: false,
        });
        self.follow_engine(now);
        Ok(())
    }

    pub fn submit_quantity(&mut self, subject: usize, quantity: u32, now: Instant) -> Result<(), ApiError> {
        if let LiveStage::SegmentReveal { round } = self.stage {
            self.enter(LiveStage::Quantity { round }, now);
        }
        let LiveStage::Quantity { round } = self.stage else {
            return Err(self.wrong_stage("quantity"));
        };
        let seat = self.engine.seat_round(subject).expect("quantity stage has an open round");
        if seat.quantity.is_some() {
            return Err(ApiError::new(ErrorCode::DuplicateSubmission, format!("quantity for round {round} already submitted")));
        }
        let cap = self.engine.params().q_cap;
        if quantity > cap {
            return Err(ApiError::new(ErrorCode::QuantityOutOfRange, format!("quantity {quantity} outside [0, {cap}]")));
        }
        self.engine.submit_quantity(subject, quantity, false).map_err(ApiError::internal)?;
        self.transcript.push(TranscriptEntry::Quantity {
            round,
            subject,
            quantity,
            substituted: false,
        });
        self.follow_engine(now);
        Ok(())
    }

    fn wrong_stage(&self, what: &str) -> ApiError {
        ApiError::new(ErrorCode::WrongStage, format!("{what} not accepted in stage {:?}", self.stage))
    }

    /// Closes every stage whose deadline has passed, substituting defaults
    /// for missing inputs. Returns whether anything changed.
    pub fn tick(&mut self, now: Instant) -> bool {
        let mut changed = false;
        while let Some(at) = self.deadline.filter(|&d| d <= now) {
            changed = true;
            match self.stage {
                LiveStage::Price { round } => {
                    let default = self.engine.default_price();
                    for s in self.engine.pending_prices() {
                        self.engine.submit_price(s, default, true).expect("default price is valid");
                        self.transcript.push(TranscriptEntry::Price {
                            round,
                            subject: s,
                            price: default,
                            substituted: true,
                        });
                    }
                    self.follow_engine(at);
                }
                LiveStage::SegmentReveal { round } => self.enter(LiveStage::Quantity { round }, at),
                LiveStage::Quantity { round } => {
                    for s in self.engine.pending_quantities() {
                        let q = self.engine.default_quantity(s).expect("outcome known in quantity stage");
                        self.engine.submit_quantity(s, q, true).expect("default quantity is valid");
                        self.transcript.push(TranscriptEntry::Quantity {
                            round,
                            subject: s,
                            quantity: q,
                            substituted: true,
                        });
                    }
                    self.follow_engine(at);
                }
                LiveStage::Feedback { round } => self.enter(self.after_feedback(round), at),
                LiveStage::Lobby | LiveStage::Finished => self.deadline = None,
            }
        }
        changed
    }

    fn after_feedback(&self, round: u32) -> LiveStage {
        if self.engine.is_finished() {
            LiveStage::Finished
        } else {
            LiveStage::Price { round: round + 1 }
        }
    }

    /// Moves the display stage forward after the engine resolved a stage.
    fn follow_engine(&mut self, at: Instant) {
        match (self.stage, self.engine.stage()) {
            (LiveStage::Price { round }, EngineStage::Quantity { .. }) => self.enter(LiveStage::SegmentReveal { round }, at),
            (LiveStage::Quantity { round }, EngineStage::Price { .. } | EngineStage::Finished) => {
                self.enter(LiveStage::Feedback { round }, at)
            }
            _ => {}
        }
    }

    fn enter(&mut self, stage: LiveStage, at: Instant) {
        self.stage = stage;
        self.deadline = match stage {
            LiveStage::Price { .. } | LiveStage::Quantity { .. } => Some(at + self.stage_timeout),
            LiveStage::SegmentReveal { .. } | LiveStage::Feedback { .. } => Some(at + self.display),
            LiveStage::Lobby | LiveStage::Finished => None,
        };
        if self.display.is_zero() {
            match stage {
                LiveStage::SegmentReveal { round } => self.enter(LiveStage::Quantity { round }, at),
                LiveStage::Feedback { round } => self.enter(self.after_feedback(round), at),
                _ => {}
            }
        }
        if stage == LiveStage::Finished {
            tracing::info!(session = %self.id, "session finished");
        }
    }

    pub fn view(&self, subject: usize, now: Instant) -> StateView {
        let history = self.engine.history(subject).to_vec();
        let cumulative = history.last().map_or(0.0, |r| r.cumulative);
        let (current, awaiting_input, waiting_on) = match self.stage {
            LiveStage::Lobby | LiveStage::Finished => (None, false, 0),
            LiveStage::Price { round } => {
                let seat = self.engine.seat_round(subject).expect("open round");
                let current = CurrentRound {
                    round,
                    price: seat.price,
                    ..blank(round)
                };
                (Some(current), seat.price.is_none(), self.engine.pending_prices().len())
            }
            LiveStage::SegmentReveal { round } | LiveStage::Quantity { round } => {
                let seat = self.engine.seat_round(subject).expect("open round");
                let outcome = seat.outcome.expect("prices resolved");
                let segment = (outcome.kind != OutcomeKind::Tie).then_some(outcome.segment);
                let current = CurrentRound {
                    round,
                    price: seat.price,
                    opp_price: seat.opp_price,
                    outcome: Some(outcome.kind),
                    segment,
                    demand_range: segment.map(|s| self.demand_range(s)),
                    quantity: seat.quantity,
                    ..blank(round)
                };
                let awaiting = matches!(self.stage, LiveStage::Quantity { .. }) && seat.quantity.is_none();
                (Some(current), awaiting, self.engine.pending_quantities().len())
            }
            LiveStage::Feedback { round } => {
                let record = history.iter().find(|r| r.round == round).cloned().expect("round complete");
                (Some(self.feedback(&record)), false, 0)
            }
        };
        StateView {
            session_id: self.id.clone(),
            treatment: self.engine.config().treatment.label,
            params: *self.engine.params(),
            subject,
            n_rounds: self.engine.config().n_rounds,
            stage: self.stage,
            deadline_ms: self.deadline.map(|d| d.saturating_duration_since(now).as_millis() as u64),
            awaiting_input,
            waiting_on,
            current,
            history,
            cumulative,
        }
    }

    fn demand_range(&self, segment: duopoly_core::Segment) -> (i64, i64) {
        let spec = self.engine.params().demand_spec(segment).expect("preset demand is integral");
        (*spec.support().start(), *spec.support().end())
    }

    fn feedback(&self, record: &RoundRecord) -> CurrentRound {
        let opponent = (0..self.engine.n_subjects())
            .filter(|&s| s != record.subject)
            .filter_map(|s| self.engine.history(s).iter().find(|r| r.round == record.round && r.pair == record.pair))
            .next()
            .map(|r| OpponentRound {
                price: r.price,
                quantity: r.quantity,
                profit: r.profit,
            });
        CurrentRound {
            round: record.round,
            price: Some(record.price),
            opp_price: Some(record.opp_price),
            outcome: Some(record.outcome.kind),
            segment: Some(record.outcome.segment),
            demand_range: Some(self.demand_range(record.outcome.segment)),
            quantity: Some(record.quantity),
            record: Some(record.clone()),
            opponent,
        }
    }

    pub fn record(&self) -> Result<SessionRecord, ApiError> {
        if !self.is_finished() {
            return Err(ApiError::new(ErrorCode::NotFinished, format!("session is in stage {:?}", self.stage)));
        }
        Ok(SessionRecord {
            log: self.engine.log(),
            transcript: self.transcript.clone(),
        })
    }

    /// True exactly once, the first time it is asked after the session ends.
    pub fn take_unpersisted(&mut self) -> bool {
        if self.is_finished() && !self.persisted {
            self.persisted = true;
            true
        } else {
            false
        }
    }
}

fn blank(round: u32) -> CurrentRound {
    CurrentRound {
        round,
        price: None,
        opp_price: None,
        outcome: None,
        segment: None,
        demand_range: None,
        quantity: None,
        record: None,
        opponent: None,
    }
}

/// Rebuilds a session log from its configuration and the ordered human
/// inputs.
pub fn replay(config: SessionConfig, transcript: &[TranscriptEntry]) -> duopoly_core::Result<SessionLog> {
    let mut engine = SessionEngine::new(config)?;
    for entry in transcript {
        match *entry {
            TranscriptEntry::Price {
                subject,
                price,
                substituted,
                ..
            } => engine.submit_price(subject, price, substituted)?,
            TranscriptEntry::Quantity {
                subject,
                quantity,
                substituted,
                ..
            } => engine.submit_quantity(subject, quantity, substituted)?,
        }
    }
    if !engine.is_finished() {
        return Err(duopoly_core::Error::Protocol("transcript ends before the last round".into()));
    }
    Ok(engine.log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use duopoly_core::TreatmentLabel;

    fn session(humans: usize, display: f64) -> LiveSession {
        let mut req = CreateSession::new(TreatmentLabel::HmLu, humans, vec![AgentPolicy::default(); 4 - humans], 3, 11);
        req.display_secs = display;
        LiveSession::create("t".into(), &req).unwrap()
    }

    #[test]
    fn lobby_until_every_seat_is_taken() {
        let now = Instant::now();
        let mut s = session(2, 5.0);
        assert_eq!(s.join(Some(1), "b".into(), now).unwrap(), 1);
        assert_eq!(s.stage(), LiveStage::Lobby);
        assert_eq!(s.join(Some(1), "c".into(), now).unwrap_err().code, ErrorCode::SeatTaken);
        assert_eq!(s.join(None, "a".into(), now).unwrap(), 0);
        assert_eq!(s.stage(), LiveStage::Price { round: 1 });
        assert_eq!(s.join(None, "d".into(), now).unwrap_err().code, ErrorCode::NoFreeSeat);
        assert_eq!(s.subject_for("a").unwrap(), 0);
        assert_eq!(s.subject_for("zz").unwrap_err().code, ErrorCode::UnknownToken);
    }

    #[test]
    fn rejects_bot_only_and_bad_timeouts() {
        let req = CreateSession::new(TreatmentLabel::HmLu, 0, vec![AgentPolicy::default(); 4], 3, 1);
        assert_eq!(LiveSession::create("x".into(), &req).unwrap_err().code, ErrorCode::InvalidConfig);
        let mut req = CreateSession::new(TreatmentLabel::HmLu, 1, vec![AgentPolicy::default(); 3], 3, 1);
        req.stage_timeout_secs = 0.0;
        assert_eq!(LiveSession::create("x".into(), &req).unwrap_err().code, ErrorCode::InvalidConfig);
        let req = CreateSession::new(TreatmentLabel::HmLu, 1, vec![AgentPolicy::default(); 2], 3, 1);
        assert_eq!(LiveSession::create("x".into(), &req).unwrap_err().code, ErrorCode::InvalidConfig);
    }

    #[test]
    fn stage_cycle_with_display_stages() {
        let t0 = Instant::now();
        let mut s = session(1, 5.0);
        s.join(None, "a".into(), t0).unwrap();
        assert_eq!(s.submit_quantity(0, 50, t0).unwrap_err().code, ErrorCode::WrongStage);
        s.submit_price(0, 10.0, t0).unwrap();
        assert_eq!(s.stage(), LiveStage::SegmentReveal { round: 1 });
        assert_eq!(s.submit_price(0, 10.0, t0).unwrap_err().code, ErrorCode::WrongStage);
        assert!(s.tick(t0 + Duration::from_secs(5)));
        assert_eq!(s.stage(), LiveStage::Quantity { round: 1 });
        s.submit_quantity(0, 80, t0 + Duration::from_secs(6)).unwrap();
        assert_eq!(s.stage(), LiveStage::Feedback { round: 1 });
        // an early price ends the feedback display
        s.submit_price(0, 11.0, t0 + Duration::from_secs(7)).unwrap();
        assert_eq!(s.stage(), LiveStage::SegmentReveal { round: 2 });
        s.submit_quantity(0, 60, t0 + Duration::from_secs(8)).unwrap();
        assert_eq!(s.stage(), LiveStage::Feedback { round: 2 });
        assert!(!s.tick(t0 + Duration::from_secs(9)));
        assert!(s.tick(t0 + Duration::from_secs(13)));
        assert_eq!(s.stage(), LiveStage::Price { round: 3 });
        assert_eq!(s.record().unwrap_err().code, ErrorCode::NotFinished);
    }

    #[test]
    fn timeouts_substitute_and_flag_defaults() {
        let t0 = Instant::now();
        let mut s = session(1, 0.0);
        s.join(None, "a".into(), t0).unwrap();
        // one long silence runs the whole session out
        assert!(s.tick(t0 + Duration::from_secs(1000)));
        assert!(s.is_finished());
        let rec = s.record().unwrap();
        rec.log.validate().unwrap();
        for r in rec.log.subject_records(0) {
            assert!(r.substituted.price && r.substituted.quantity);
            assert_eq!(r.price, 12.0);
            let mean = s.engine.params().segment_mean(r.outcome.segment) as u32;
            assert_eq!(r.quantity, mean);
        }
        assert_eq!(rec.transcript.len(), 6);
        assert!(s.take_unpersisted());
        assert!(!s.take_unpersisted());
        assert_eq!(replay(s.config().clone(), &rec.transcript).unwrap(), rec.log);
    }

    #[test]
    fn input_validation() {
        let t0 = Instant::now();
        let mut s = session(1, 0.0);
        s.join(None, "a".into(), t0).unwrap();
        assert_eq!(s.submit_price(0, 10.05, t0).unwrap_err().code, ErrorCode::OffGrid);
        assert_eq!(s.submit_price(0, 2.9, t0).unwrap_err().code, ErrorCode::PriceOutOfRange);
        assert_eq!(s.submit_price(0, 12.1, t0).unwrap_err().code, ErrorCode::PriceOutOfRange);
        assert_eq!(s.submit_price(0, f64::NAN, t0).unwrap_err().code, ErrorCode::PriceOutOfRange);
        s.submit_price(0, 3.0, t0).unwrap();
        assert_eq!(s.submit_quantity(0, 131, t0).unwrap_err().code, ErrorCode::QuantityOutOfRange);
        s.submit_quantity(0, 0, t0).unwrap();
    }

    #[test]
    fn low_margin_floor() {
        let t0 = Instant::now();
        let req = CreateSession::new(TreatmentLabel::LmLu, 1, vec![AgentPolicy::default(); 3], 2, 5);
        let mut s = LiveSession::create("lm".into(), &req).unwrap();
        s.join(None, "a".into(), t0).unwrap();
        assert_eq!(s.submit_price(0, 8.5, t0).unwrap_err().code, ErrorCode::PriceOutOfRange);
        s.submit_price(0, 9.0, t0).unwrap();
    }

    #[test]
    fn duplicate_price_between_two_humans() {
        let t0 = Instant::now();
        let mut s = session(2, 0.0);
        s.join(None, "a".into(), t0).unwrap();
        s.join(None, "b".into(), t0).unwrap();
        s.submit_price(0, 9.0, t0).unwrap();
        assert_eq!(s.submit_price(0, 9.5, t0).unwrap_err().code, ErrorCode::DuplicateSubmission);
        assert_eq!(s.submit_quantity(0, 40, t0).unwrap_err().code, ErrorCode::WrongStage);
        let v = s.view(0, t0);
        assert_eq!(v.waiting_on, 1);
        assert!(!v.awaiting_input);
        assert_eq!(v.deadline_ms, Some(20_000));
    }
}
