use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    add_tokens, realized_profit, GameParams, OutcomeKind, PriceOutcome, Segment, Treatment, TreatmentLabel,
};

/// Which of a record's decisions were filled in by a timeout default rather
/// than chosen by the seat.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub price: bool,
    pub quantity: bool,
}

impl Substitution {
    pub fn any(&self) -> bool {
        self.price || self.quantity
    }
}

/// One seller's view of one completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: u32,
    pub subject: usize,
    pub group: usize,
    /// Session-wide pair id, `2 * group + k` for the group's k-th pair.
    pub pair: usize,
    pub price: f64,
    pub opp_price: f64,
    pub outcome: PriceOutcome,
    pub quantity: u32,
    pub demand: u32,
    pub profit: f64,
    pub cumulative: f64,
    #[serde(default)]
    pub substituted: Substitution,
}

/// A complete session: who played with whom and every decision made.
///
/// Records are ordered by round, then pair, then subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub treatment: Treatment,
    pub seed: u64,
    /// Subject ids per group, ascending within each group.
    pub groups: Vec<Vec<usize>>,
    pub records: Vec<RoundRecord>,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "treatment",
    "seed",
    "group",
    "pair",
    "round",
    "subject",
    "price",
    "opp_price",
    "outcome",
    "segment",
    "quantity",
    "demand",
    "profit",
    "cumulative",
];

pub const GROUP_SIZE: usize = 4;

/// Flat CSV row. Floats go through `Display`, which prints the shortest
/// representation that parses back to the same value.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    treatment: String,
    seed: u64,
    group: usize,
    pair: usize,
    round: u32,
    subject: usize,
    price: String,
    opp_price: String,
    outcome: String,
    segment: String,
    quantity: u32,
    demand: u32,
    profit: String,
    cumulative: String,
}

fn float_text(v: f64) -> String {
    format!("{v}")
}

impl SessionLog {
    pub fn n_subjects(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn n_rounds(&self) -> u32 {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn params(&self) -> &GameParams {
        &self.treatment.params
    }

    /// Records of one subject, oldest first.
    pub fn subject_records(&self, subject: usize) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter(move |r| r.subject == subject)
    }

    /// Group of each subject, indexed by subject id.
    pub fn group_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_subjects()];
        for (g, members) in self.groups.iter().enumerate() {
            for &s in members {
                if s < out.len() {
                    out[s] = Some(g);
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(CsvRow {
                treatment: self.treatment.label.as_str().to_string(),
                seed: self.seed,
                group: r.group,
                pair: r.pair,
                round: r.round,
                subject: r.subject,
                price: float_text(r.price),
                opp_price: float_text(r.opp_price),
                outcome: r.outcome.kind.as_str().to_string(),
                segment: r.outcome.segment.as_str().to_string(),
                quantity: r.quantity,
                demand: r.demand,
                profit: float_text(r.profit),
                cumulative: float_text(r.cumulative),
            })?;
        }
        if self.records.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let log: SessionLog = serde_json::from_str(text)?;
        log.validate()?;
        Ok(log)
    }

    /// Reads a CSV export. Parameters come from the treatment preset named in
    /// the file unless `params` overrides them.
    pub fn read_csv<R: Read>(reader: R, params: Option<GameParams>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let found: Vec<&str> = headers.iter().collect();
        if found != CSV_COLUMNS {
            return Err(Error::Ingest {
                row: 0,
                message: format!("header mismatch: expected {}, got {}", CSV_COLUMNS.join(","), found.join(",")),
            });
        }
        let mut label: Option<TreatmentLabel> = None;
        let mut seed: Option<u64> = None;
        let mut records = Vec::new();
        for (idx, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row_no = idx + 1;
            let bad = |message: String| Error::Ingest { row: row_no, message };
            let row = row.map_err(|e| bad(format!("malformed row: {e}")))?;
            let row_label: TreatmentLabel = row.treatment.parse().map_err(|_| bad(format!("unknown treatment label {:?}", row.treatment)))?;
            match label {
                None => label = Some(row_label),
                Some(l) if l != row_label => return Err(bad(format!("treatment changes from {l} to {row_label}"))),
                _ => {}
            }
            match seed {
                None => seed = Some(row.seed),
                Some(s) if s != row.seed => return Err(bad(format!("seed changes from {s} to {}", row.seed))),
                _ => {}
            }
            let number = |name: &str, text: &str| -> Result<f64> {
                text.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("{name}: not a finite number: {text:?}")))
            };
            let kind: OutcomeKind = row.outcome.parse().map_err(|e: String| bad(e))?;
            let segment: Segment = row.segment.parse().map_err(|e: String| bad(e))?;
            records.push(RoundRecord {
                round: row.round,
                subject: row.subject,
                group: row.group,
                pair: row.pair,
                price: number("price", &row.price)?,
                opp_price: number("opp_price", &row.opp_price)?,
                outcome: PriceOutcome { kind, segment },
                quantity: row.quantity,
                demand: row.demand,
                profit: number("profit", &row.profit)?,
                cumulative: number("cumulative", &row.cumulative)?,
                substituted: Substitution::default(),
            });
        }
        let label = label.ok_or_else(|| Error::Empty("csv has no data rows".into()))?;
        let treatment = match params {
            Some(p) => Treatment { label, params: p },
            None => Treatment::preset(label),
        };
        treatment.params.validate()?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in &records {
            let members = groups.entry(r.group).or_default();
            if !members.contains(&r.subject) {
                members.push(r.subject);
            }
        }
        let n_groups = groups.keys().next_back().map_or(0, |g| g + 1);
        let mut group_list = vec![Vec::new(); n_groups];
        for (g, mut members) in groups {
            members.sort_unstable();
            group_list[g] = members;
        }
        let log = SessionLog {
            treatment,
            seed: seed.unwrap_or(0),
            groups: group_list,
            records,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn load_csv(path: impl AsRef<Path>, params: Option<GameParams>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), params)
    }

    /// Full check with prices required on the grid.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(true)
    }

    /// Checks every record and structural invariant. Errors carry the
    /// 1-based record index (the CSV data row).
    pub fn validate_with(&self, require_grid: bool) -> Result<()> {
        let params = &self.treatment.params;
        params.validate()?;
        let n = self.n_subjects();
        let setup = |m: String| Err(Error::SessionSetup(m));
        if n == 0 {
            return setup("log has no subjects".into());
        }
        let group_of = self.group_of();
        let mut seen = vec![false; n];
        for (g, members) in self.groups.iter().enumerate() {
            if members.len() != GROUP_SIZE {
                return setup(format!("group {g} has {} members, expected {GROUP_SIZE}", members.len()));
            }
            if members.windows(2).any(|w| w[0] >= w[1]) {
                return setup(format!("group {g} members are not strictly ascending"));
            }
            for &s in members {
                if s >= n || seen[s] {
                    return setup(format!("subject {s} is out of range or in more than one group"));
                }
                seen[s] = true;
            }
        }
        let high = params.demand_spec(Segment::High)?;
        let low = params.demand_spec(Segment::Low)?;

        let mut expected_round = 1u32;
        let mut idx = 0usize;
        let mut cumulative = vec![0.0f64; n];
        let records = &self.records;
        while idx < records.len() {
            let round = records[idx].round;
            let row = idx + 1;
            if round != expected_round {
                return Err(Error::Ingest {
                    row,
                    message: format!("expected round {expected_round}, found {round}"),
                });
            }
            let end = idx + n;
            if end > records.len() {
                return Err(Error::Ingest {
                    row,
                    message: format!("round {round} has {} records, expected {n}", records.len() - idx),
                });
            }
            let mut present = vec![false; n];
            for k in (idx..end).step_by(2) {
                let pair = [&records[k], &records[k + 1]];
                let err = |offset: usize, message: String| Error::Ingest { row: k + offset + 1, message };
                for (offset, r) in pair.iter().enumerate() {
                    if r.round != round {
                        return Err(err(offset, format!("round {} inside round {round}", r.round)));
                    }
                    if r.subject >= n {
                        return Err(err(offset, format!("subject {} out of range", r.subject)));
                    }
                    if present[r.subject] {
                        return Err(err(offset, format!("subject {} appears twice in round {round}", r.subject)));
                    }
                    present[r.subject] = true;
                    if group_of[r.subject] != Some(r.group) {
                        return Err(err(offset, format!("subject {} is not in group {}", r.subject, r.group)));
                    }
                    if r.pair / 2 != r.group {
                        return Err(err(offset, format!("pair {} does not belong to group {}", r.pair, r.group)));
                    }
                    if require_grid {
                        if !params.is_grid_price(r.price) {
                            return Err(err(offset, format!("price {} is not on the price grid", r.price)));
                        }
                    } else if !(r.price >= params.cost - 1e-9 && r.price <= params.reserve + 1e-9) {
                        return Err(err(offset, format!("price {} outside [c, r]", r.price)));
                    }
                    if r.quantity > params.q_cap {
                        return Err(err(offset, format!("quantity {} above cap {}", r.quantity, params.q_cap)));
                    }
                    if !r.outcome.is_consistent() {
                        return Err(err(offset, "outcome and segment disagree".into()));
                    }
                    if OutcomeKind::compare(r.price, r.opp_price) != r.outcome.kind {
                        return Err(err(offset, format!("outcome {} contradicts prices {} vs {}", r.outcome.kind.as_str(), r.price, r.opp_price)));
                    }
                    let spec = if r.outcome.segment == Segment::High { high } else { low };
                    if !spec.contains(r.demand as i64) {
                        return Err(err(offset, format!("demand {} outside the {} segment support", r.demand, r.outcome.segment.as_str())));
                    }
                    let profit = realized_profit(r.price, r.quantity as f64, r.demand as f64, params.cost);
                    if (profit - r.profit).abs() > 1e-6 {
                        return Err(err(offset, format!("profit {} does not match price, quantity and demand (expected {profit})", r.profit)));
                    }
                    let running = add_tokens(cumulative[r.subject], r.profit);
                    if (running - r.cumulative).abs() > 1e-6 {
                        return Err(err(offset, format!("cumulative {} is not the running sum (expected {running})", r.cumulative)));
                    }
                    cumulative[r.subject] = r.cumulative;
                }
                let (a, b) = (pair[0], pair[1]);
                if a.pair != b.pair || a.subject >= b.subject {
                    return Err(err(1, format!("records {} and {} do not form a pair in subject order", k + 1, k + 2)));
                }
                if a.price != b.opp_price || b.price != a.opp_price {
                    return Err(err(1, "pair members disagree on prices".into()));
                }
                if a.outcome.segment == b.outcome.segment {
                    return Err(err(1, "both pair members served the same segment".into()));
                }
                if k > idx && records[k - 1].pair >= a.pair {
                    return Err(err(0, "pairs are not in ascending order".into()));
                }
            }
            idx = end;
            expected_round += 1;
        }
        Ok(())
    }
}
