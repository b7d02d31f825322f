use std::sync::mpsc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::market::{add_tokens, realized_profit, GameParams, OutcomeKind, PriceOutcome, Segment, Treatment};
use crate::simulation::log::{RoundRecord, SessionLog, Substitution, GROUP_SIZE};
use crate::simulation::policy::AgentPolicy;

// Stream tags. Every random quantity in a session comes from its own stream,
// so e.g. the demand draws do not depend on what anyone ordered.
const GROUPS: u64 = 1;
const PAIRING: u64 = 2;
const TIE: u64 = 3;
const DEMAND: u64 = 4;
const POLICY: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one (seed, purpose, a, b) coordinate.
pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [tag, a, b] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub treatment: Treatment,
    /// One policy per seat; seat `i` is subject `i`.
    pub policies: Vec<AgentPolicy>,
    pub n_rounds: u32,
    pub seed: u64,
}

impl SessionConfig {
    pub fn uniform(treatment: Treatment, policy: AgentPolicy, n_subjects: usize, n_rounds: u32, seed: u64) -> Self {
        SessionConfig {
            treatment,
            policies: vec![policy; n_subjects],
            n_rounds,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.treatment.params.validate()?;
        let n = self.policies.len();
        if n == 0 || !n.is_multiple_of(GROUP_SIZE) {
            return Err(Error::SessionSetup(format!(
                "subject count must be a positive multiple of {GROUP_SIZE}, got {n}"
            )));
        }
        if self.n_rounds == 0 {
            return Err(Error::SessionSetup("need at least one round".into()));
        }
        for p in &self.policies {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum EngineStage {
    Price { round: u32 },
    Quantity { round: u32 },
    Finished,
}

/// A seat's slice of the round in progress. Everything is filled in as soon
/// as the engine knows it; callers decide what to show.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeatRound {
    pub round: u32,
    pub pair: usize,
    pub partner: usize,
    pub price: Option<f64>,
    pub opp_price: Option<f64>,
    pub outcome: Option<PriceOutcome>,
    pub quantity: Option<u32>,
}

/// Two-stage protocol for one session, driven one submission at a time.
///
/// Bot seats decide as soon as their stage opens; external seats are fed
/// through `submit_price` / `submit_quantity`. Stages are session-wide: the
/// quantity stage opens once every price of the round is in.
#[derive(Debug, Clone)]
pub struct SessionEngine {
    config: SessionConfig,
    eq: Equilibrium,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    policy_rngs: Vec<ChaCha8Rng>,
    histories: Vec<Vec<RoundRecord>>,
    stage: EngineStage,
    /// Current round's pairs by pair id, members ascending.
    pairs: Vec<[usize; 2]>,
    pair_of: Vec<usize>,
    prices: Vec<Option<f64>>,
    outcomes: Vec<Option<PriceOutcome>>,
    quantities: Vec<Option<u32>>,
    substituted: Vec<Substitution>,
}

impl SessionEngine {
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let eq = Equilibrium::solve(&config.treatment.params)?;
        let n = config.policies.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seed, GROUPS, 0, 0));
        let groups: Vec<Vec<usize>> = order
            .chunks(GROUP_SIZE)
            .map(|c| {
                let mut g = c.to_vec();
                g.sort_unstable();
                g
            })
            .collect();
        let mut group_of = vec![0; n];
        for (g, members) in groups.iter().enumerate() {
            for &s in members {
                group_of[s] = g;
            }
        }
        let policy_rngs = (0..n).map(|s| stream(config.seed, POLICY, s as u64, 0)).collect();
        let mut engine = SessionEngine {
            eq,
            groups,
            group_of,
            policy_rngs,
            histories: vec![Vec::with_capacity(config.n_rounds as usize); n],
            stage: EngineStage::Price { round: 1 },
            pairs: Vec::new(),
            pair_of: vec![0; n],
            prices: vec![None; n],
            outcomes: vec![None; n],
            quantities: vec![None; n],
            substituted: vec![Substitution::default(); n],
            config,
        };
        engine.open_round(1)?;
        engine.advance()?;
        Ok(engine)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn params(&self) -> &GameParams {
        &self.config.treatment.params
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    pub fn stage(&self) -> EngineStage {
        self.stage
    }

    pub fn n_subjects(&self) -> usize {
        self.config.policies.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_external(&self, subject: usize) -> bool {
        self.config.policies.get(subject).is_some_and(AgentPolicy::is_external)
    }

    pub fn external_seats(&self) -> Vec<usize> {
        (0..self.n_subjects()).filter(|&s| self.is_external(s)).collect()
    }

    pub fn history(&self, subject: usize) -> &[RoundRecord] {
        &self.histories[subject]
    }

    pub fn is_finished(&self) -> bool {
        self.stage == EngineStage::Finished
    }

    /// External seats that still owe a price in the open price stage.
    pub fn pending_prices(&self) -> Vec<usize> {
        match self.stage {
            EngineStage::Price { .. } => (0..self.n_subjects()).filter(|&s| self.prices[s].is_none()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn pending_quantities(&self) -> Vec<usize> {
        match self.stage {
            EngineStage::Quantity { .. } => (0..self.n_subjects()).filter(|&s| self.quantities[s].is_none()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn seat_round(&self, subject: usize) -> Option<SeatRound> {
        let round = match self.stage {
            EngineStage::Price { round } | EngineStage::Quantity { round } => round,
            EngineStage::Finished => return None,
        };
        let pair = self.pair_of[subject];
        let [a, b] = self.pairs[pair];
        let partner = if a == subject { b } else { a };
        let opp_price = match self.stage {
            EngineStage::Quantity { .. } => self.prices[partner],
            _ => None,
        };
        Some(SeatRound {
            round,
            pair,
            partner,
            price: self.prices[subject],
            opp_price,
            outcome: self.outcomes[subject],
            quantity: self.quantities[subject],
        })
    }

    /// Order used when an external seat misses the quantity deadline: the
    /// mean of the segment it was assigned.
    pub fn default_quantity(&self, subject: usize) -> Option<u32> {
        let outcome = self.outcomes.get(subject).copied().flatten()?;
        Some(self.params().segment_mean(outcome.segment).round() as u32)
    }

    pub fn default_price(&self) -> f64 {
        self.params().reserve
    }

    pub fn submit_price(&mut self, subject: usize, price: f64, substituted: bool) -> Result<()> {
        let round = match self.stage {
            EngineStage::Price { round } => round,
            other => return Err(Error::Protocol(format!("price submitted outside the price stage ({other:?})"))),
        };
        self.check_external(subject)?;
        if self.prices[subject].is_some() {
            return Err(Error::Protocol(format!("subject {subject} already posted a price in round {round}")));
        }
        let params = self.params();
        if !params.is_grid_price(price) {
            return Err(Error::PriceOutOfRange {
                price,
                lo: params.cost,
                hi: params.reserve,
            });
        }
        self.prices[subject] = Some(params.grid_value((price / params.price_step).round() as i64));
        self.substituted[subject].price = substituted;
        self.advance()
    }

    pub fn submit_quantity(&mut self, subject: usize, quantity: u32, substituted: bool) -> Result<()> {
        let round = match self.stage {
            EngineStage::Quantity { round } => round,
            other => return Err(Error::Protocol(format!("quantity submitted outside the quantity stage ({other:?})"))),
        };
        self.check_external(subject)?;
        if self.quantities[subject].is_some() {
            return Err(Error::Protocol(format!("subject {subject} already ordered in round {round}")));
        }
        if quantity > self.params().q_cap {
            return Err(Error::Protocol(format!("quantity {quantity} above the cap {}", self.params().q_cap)));
        }
        self.quantities[subject] = Some(quantity);
        self.substituted[subject].quantity = substituted;
        self.advance()
    }

    fn check_external(&self, subject: usize) -> Result<()> {
        if subject >= self.n_subjects() {
            return Err(Error::Protocol(format!("no seat {subject}")));
        }
        if !self.is_external(subject) {
            return Err(Error::Protocol(format!("seat {subject} is played by a bot")));
        }
        Ok(())
    }

    fn policy_error(round: u32, subject: usize, e: Error) -> Error {
        Error::Policy {
            round,
            subject,
            message: e.to_string(),
        }
    }

    fn open_round(&mut self, round: u32) -> Result<()> {
        let n = self.n_subjects();
        self.stage = EngineStage::Price { round };
        self.pairs.clear();
        for (g, members) in self.groups.iter().enumerate() {
            let mut m = members.clone();
            m.shuffle(&mut stream(self.config.seed, PAIRING, round as u64, g as u64));
            let mut two = [[m[0].min(m[1]), m[0].max(m[1])], [m[2].min(m[3]), m[2].max(m[3])]];
            two.sort_unstable();
            for (k, p) in two.into_iter().enumerate() {
                let id = 2 * g + k;
                self.pair_of[p[0]] = id;
                self.pair_of[p[1]] = id;
                self.pairs.push(p);
            }
        }
        self.prices = vec![None; n];
        self.outcomes = vec![None; n];
        self.quantities = vec![None; n];
        self.substituted = vec![Substitution::default(); n];
        for s in 0..n {
            let policy = &self.config.policies[s];
            if policy.is_external() {
                continue;
            }
            let price = policy
                .decide_price(&self.eq, &self.histories[s], &mut self.policy_rngs[s])
                .map_err(|e| Self::policy_error(round, s, e))?;
            self.prices[s] = Some(price);
        }
        Ok(())
    }

    /// Moves through every stage that has all its inputs.
    fn advance(&mut self) -> Result<()> {
        loop {
            match self.stage {
                EngineStage::Price { round } if self.prices.iter().all(Option::is_some) => self.resolve_prices(round)?,
                EngineStage::Quantity { round } if self.quantities.iter().all(Option::is_some) => {
                    self.resolve_quantities(round)?;
                    if round >= self.config.n_rounds {
                        self.stage = EngineStage::Finished;
                    } else {
                        self.open_round(round + 1)?;
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn resolve_prices(&mut self, round: u32) -> Result<()> {
        for (id, &[a, b]) in self.pairs.iter().enumerate() {
            let (pa, pb) = (self.prices[a].unwrap(), self.prices[b].unwrap());
            let (oa, ob) = match OutcomeKind::compare(pa, pb) {
                OutcomeKind::Lower => (PriceOutcome::lower(), PriceOutcome::higher()),
                OutcomeKind::Higher => (PriceOutcome::higher(), PriceOutcome::lower()),
                OutcomeKind::Tie => {
                    let a_high: bool = stream(self.config.seed, TIE, round as u64, id as u64).gen();
                    let sa = if a_high { Segment::High } else { Segment::Low };
                    (PriceOutcome::tie(sa), PriceOutcome::tie(sa.other()))
                }
            };
            self.outcomes[a] = Some(oa);
            self.outcomes[b] = Some(ob);
        }
        self.stage = EngineStage::Quantity { round };
        for s in 0..self.n_subjects() {
            let policy = &self.config.policies[s];
            if policy.is_external() {
                continue;
            }
            let q = policy
                .decide_quantity(
                    &self.eq,
                    self.prices[s].unwrap(),
                    self.outcomes[s].unwrap().kind,
                    &mut self.policy_rngs[s],
                )
                .map_err(|e| Self::policy_error(round, s, e))?;
            self.quantities[s] = Some(q);
        }
        Ok(())
    }

    fn resolve_quantities(&mut self, round: u32) -> Result<()> {
        let params = *self.params();
        let high = params.demand_spec(Segment::High)?;
        let low = params.demand_spec(Segment::Low)?;
        for (id, &members) in self.pairs.iter().enumerate() {
            let mut rng = stream(self.config.seed, DEMAND, round as u64, id as u64);
            for (k, &s) in members.iter().enumerate() {
                let partner = members[1 - k];
                let outcome = self.outcomes[s].unwrap();
                let spec = if outcome.segment == Segment::High { high } else { low };
                let demand = rng.gen_range(spec.support()) as u32;
                let price = self.prices[s].unwrap();
                let quantity = self.quantities[s].unwrap();
                let profit = realized_profit(price, quantity as f64, demand as f64, params.cost);
                let prev = self.histories[s].last().map_or(0.0, |r| r.cumulative);
                self.histories[s].push(RoundRecord {
                    round,
                    subject: s,
                    group: self.group_of[s],
                    pair: id,
                    price,
                    opp_price: self.prices[partner].unwrap(),
                    outcome,
                    quantity,
                    demand,
                    profit,
                    cumulative: add_tokens(prev, profit),
                    substituted: self.substituted[s],
                });
            }
        }
        Ok(())
    }

    /// Completed rounds so far, ordered by round, pair, subject.
    pub fn records(&self) -> Vec<RoundRecord> {
        let done = self.histories.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(done * self.n_subjects());
        for t in 0..done {
            let start = out.len();
            out.extend(self.histories.iter().map(|h| h[t].clone()));
            out[start..].sort_by_key(|r| (r.pair, r.subject));
        }
        out
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            treatment: self.config.treatment,
            seed: self.config.seed,
            groups: self.groups.clone(),
            records: self.records(),
        }
    }
}

/// What an external seat is asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum InputRequest {
    Price {
        round: u32,
        subject: usize,
        channel: String,
    },
    /// At a tie the segment is still undecided from the seller's side, so
    /// only the comparison is passed on.
    Quantity {
        round: u32,
        subject: usize,
        channel: String,
        price: f64,
        opp_price: f64,
        outcome: OutcomeKind,
    },
}

pub trait ExternalInputs {
    fn price(&mut self, engine: &SessionEngine, request: &InputRequest) -> Result<f64>;
    fn quantity(&mut self, engine: &SessionEngine, request: &InputRequest) -> Result<u32>;
}

/// Refuses every request; for sessions with bots only.
pub struct NoExternal;

impl ExternalInputs for NoExternal {
    fn price(&mut self, _: &SessionEngine, request: &InputRequest) -> Result<f64> {
        Err(Error::Protocol(format!("no input source for {request:?}")))
    }

    fn quantity(&mut self, _: &SessionEngine, request: &InputRequest) -> Result<u32> {
        Err(Error::Protocol(format!("no input source for {request:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputReply {
    Price(f64),
    Quantity(u32),
}

/// Forwards requests over a channel and waits up to `timeout` for each reply.
pub struct ChannelInputs {
    pub requests: mpsc::Sender<InputRequest>,
    pub replies: mpsc::Receiver<InputReply>,
    pub timeout: Duration,
}

impl ChannelInputs {
    fn ask(&mut self, request: &InputRequest) -> Result<InputReply> {
        self.requests
            .send(request.clone())
            .map_err(|_| Error::Protocol("input channel disconnected".into()))?;
        self.replies.recv_timeout(self.timeout).map_err(|e| match e {
            mpsc::RecvTimeoutError::Timeout => Error::Protocol(format!("no reply within {:?} to {request:?}", self.timeout)),
            mpsc::RecvTimeoutError::Disconnected => Error::Protocol("input channel disconnected".into()),
        })
    }
}

impl ExternalInputs for ChannelInputs {
    fn price(&mut self, _: &SessionEngine, request: &InputRequest) -> Result<f64> {
        match self.ask(request)? {
            InputReply::Price(p) => Ok(p),
            other => Err(Error::Protocol(format!("expected a price, got {other:?}"))),
        }
    }

    fn quantity(&mut self, _: &SessionEngine, request: &InputRequest) -> Result<u32> {
        match self.ask(request)? {
            InputReply::Quantity(q) => Ok(q),
            other => Err(Error::Protocol(format!("expected a quantity, got {other:?}"))),
        }
    }
}

fn channel_of(engine: &SessionEngine, subject: usize) -> String {
    match &engine.config.policies[subject] {
        AgentPolicy::External { channel } => channel.clone(),
        _ => String::new(),
    }
}

/// Runs a session to completion, asking `inputs` for every external decision.
pub fn run_session_with(config: SessionConfig, inputs: &mut dyn ExternalInputs) -> Result<SessionLog> {
    let mut engine = SessionEngine::new(config)?;
    loop {
        match engine.stage() {
            EngineStage::Finished => return Ok(engine.log()),
            EngineStage::Price { round } => {
                for s in engine.pending_prices() {
                    let request = InputRequest::Price {
                        round,
                        subject: s,
                        channel: channel_of(&engine, s),
                    };
                    let p = inputs.price(&engine, &request).map_err(|e| SessionEngine::policy_error(round, s, e))?;
                    engine.submit_price(s, p, false).map_err(|e| SessionEngine::policy_error(round, s, e))?;
                }
            }
            EngineStage::Quantity { round } => {
                for s in engine.pending_quantities() {
                    let seat = engine.seat_round(s).expect("quantity stage is open");
                    let request = InputRequest::Quantity {
                        round,
                        subject: s,
                        channel: channel_of(&engine, s),
                        price: seat.price.expect("prices resolved"),
                        opp_price: seat.opp_price.expect("prices resolved"),
                        outcome: seat.outcome.expect("prices resolved").kind,
                    };
                    let q = inputs
                        .quantity(&engine, &request)
                        .map_err(|e| SessionEngine::policy_error(round, s, e))?;
                    engine.submit_quantity(s, q, false).map_err(|e| SessionEngine::policy_error(round, s, e))?;
                }
            }
        }
    }
}

/// Bot-only session.
pub fn run_session(treatment: Treatment, policies: Vec<AgentPolicy>, n_rounds: u32, seed: u64) -> Result<SessionLog> {
    run_session_with(
        SessionConfig {
            treatment,
            policies,
            n_rounds,
            seed,
        },
        &mut NoExternal,
    )
}
