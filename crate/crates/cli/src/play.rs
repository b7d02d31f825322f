use std::io::{BufRead, Write};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use duopoly_client::{Client, ClientError};
use duopoly_core::protocol::{CreateSession, ErrorCode, LiveStage, StateView};
use duopoly_core::simulation::{AgentPolicy, RoundRecord};
use duopoly_core::TreatmentLabel;

use crate::{parse_policy, usage};

#[derive(Args)]
pub struct PlayArgs {
    /// Service root.
    #[arg(long, env = "DUOPOLY_URL", default_value = "http://127.0.0.1:8080")]
    url: String,
    /// Join this session; without it a new one is created.
    #[arg(long)]
    session: Option<String>,
    /// Human seat to claim; the lowest free one otherwise.
    #[arg(long)]
    seat: Option<usize>,
    /// Treatment of a new session.
    #[arg(long, short, default_value = "HM_LU")]
    treatment: String,
    /// Human seats in a new session.
    #[arg(long, default_value_t = 1)]
    humans: usize,
    /// Bot policy for a new session, repeated to cycle; equilibrium bots by default.
    #[arg(long = "bot", value_name = "POLICY")]
    bots: Vec<String>,
    /// Total seats in a new session (a multiple of 4).
    #[arg(long, default_value_t = 4)]
    seats: usize,
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seconds before a missing input is replaced by the default.
    #[arg(long, default_value_t = duopoly_core::protocol::DEFAULT_STAGE_TIMEOUT_SECS)]
    timeout: f64,
    /// Seconds the segment reveal and round feedback stay up.
    #[arg(long, default_value_t = duopoly_core::protocol::DEFAULT_DISPLAY_SECS)]
    display: f64,
    #[arg(long, default_value_t = 500)]
    poll_ms: u64,
}

pub fn run(args: PlayArgs) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let stdin = std::io::stdin();
    runtime.block_on(play(args, &mut stdin.lock()))
}

fn read_line(input: &mut impl BufRead) -> anyhow::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line).context("reading stdin")? == 0 {
        return Ok(None);
    }
    let line = line.trim().to_string();
    if line.eq_ignore_ascii_case("q") || line.eq_ignore_ascii_case("quit") {
        return Ok(None);
    }
    Ok(Some(line))
}

fn prompt(text: &str) {
    print!("{text}");
    let _ = std::io::stdout().flush();
}

fn row(r: &RoundRecord) -> String {
    format!(
        "round {:>3}: price {:>5} vs {:>5} ({}, {} segment)  order {:>3}  demand {:>3}  profit {:>8.2}  total {:>9.2}{}",
        r.round,
        r.price,
        r.opp_price,
        r.outcome.kind.as_str(),
        r.outcome.segment.as_str(),
        r.quantity,
        r.demand,
        r.profit,
        r.cumulative,
        if r.substituted.price || r.substituted.quantity { "  (timed out)" } else { "" }
    )
}

/// Rejections that mean "try another value"; anything else ends the game.
fn retryable(err: &ClientError) -> bool {
    matches!(
        err.code(),
        Some(ErrorCode::OffGrid | ErrorCode::PriceOutOfRange | ErrorCode::QuantityOutOfRange | ErrorCode::WrongStage | ErrorCode::DuplicateSubmission)
    )
}

async fn play(args: PlayArgs, input: &mut impl BufRead) -> anyhow::Result<()> {
    let client = Client::new(&args.url);
    let session = match &args.session {
        Some(id) => id.clone(),
        None => {
            let treatment: TreatmentLabel = args.treatment.parse().map_err(|e: duopoly_core::Error| usage(e.to_string()))?;
            if args.humans > args.seats {
                return Err(usage("--humans exceeds --seats"));
            }
            let cycle = if args.bots.is_empty() {
                vec![AgentPolicy::default()]
            } else {
                args.bots.iter().map(|b| parse_policy(b)).collect::<anyhow::Result<Vec<_>>>()?
            };
            let bots = cycle.iter().cycle().take(args.seats - args.humans).cloned().collect();
            let mut req = CreateSession::new(treatment, args.humans, bots, args.rounds, args.seed);
            req.stage_timeout_secs = args.timeout;
            req.display_secs = args.display;
            let created = client.create_session(&req).await.context("creating the session")?;
            println!("session {} ({}, {} seats, {} for people)", created.session_id, created.treatment, created.seats, created.humans);
            created.session_id
        }
    };
    let joined = client.join(&session, args.seat).await.context("joining")?;
    let token = joined.token;
    let params = joined.view.params;
    println!(
        "seat {}: prices {}..{} in steps of {}, orders 0..{}; type q to leave",
        joined.subject, params.cost, params.reserve, params.price_step, params.q_cap
    );

    let mut shown = 0;
    let mut lobby_noted = false;
    loop {
        let view: StateView = client.state(&session, &token).await.context("polling the session")?;
        for r in &view.history[shown..] {
            println!("{}", row(r));
        }
        shown = view.history.len();
        let cur = view.current.as_ref();
        match view.stage {
            LiveStage::Finished => {
                println!("session over; total earnings {:.2}", view.cumulative);
                return Ok(());
            }
            LiveStage::Lobby if !lobby_noted => {
                println!("waiting for the other seats to join");
                lobby_noted = true;
            }
            LiveStage::Price { round } if view.awaiting_input => {
                prompt(&format!("round {round} price: "));
                let Some(line) = read_line(input)? else { return leave() };
                let Ok(price) = line.parse::<f64>() else {
                    println!("not a number: {line:?}");
                    continue;
                };
                match client.submit_price(&session, &token, price).await {
                    Ok(_) => {}
                    Err(e) if retryable(&e) => println!("{e}"),
                    Err(e) => return Err(e.into()),
                }
                continue;
            }
            LiveStage::SegmentReveal { round } | LiveStage::Quantity { round } if cur.is_some_and(|c| c.quantity.is_none()) => {
                let c = cur.expect("checked above");
                let opp = c.opp_price.map_or("-".into(), |p| p.to_string());
                let served = match (c.segment, c.demand_range) {
                    (Some(s), Some((lo, hi))) => format!("{} segment, demand {lo}..{hi}", s.as_str()),
                    _ => "tie: either segment, equal odds".into(),
                };
                println!("round {round}: opponent priced {opp}; {served}");
                prompt(&format!("round {round} order: "));
                let Some(line) = read_line(input)? else { return leave() };
                let Ok(quantity) = line.parse::<u32>() else {
                    println!("not a whole number: {line:?}");
                    continue;
                };
                match client.submit_quantity(&session, &token, quantity).await {
                    Ok(_) => {}
                    Err(e) if retryable(&e) => println!("{e}"),
                    Err(e) => return Err(e.into()),
                }
                continue;
            }
            _ => {}
        }
        tokio::time::sleep(Duration::from_millis(args.poll_ms)).await;
    }
}

fn leave() -> anyhow::Result<()> {
    println!("leaving; the session carries on with default inputs");
    Ok(())
}
