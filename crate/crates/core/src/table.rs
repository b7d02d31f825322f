//! Per-treatment equilibrium predictions laid out branch by branch on the
//! experiment's price grid, with each closed form probed at a few prices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{optimal_quantity, Equilibrium, TieQuantityRule, TieRegime, TieSituation};
use crate::error::{Error, Result};
use crate::market::{GameParams, Segment, Treatment, TreatmentLabel};

pub const PROBES_PER_BRANCH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// CDF below the support (identically zero)
    CdfZero,
    Cdf,
    Lower,
    Tie,
    Higher,
}

impl BranchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchKind::CdfZero => "cdf_zero",
            BranchKind::Cdf => "cdf",
            BranchKind::Lower => "lower",
            BranchKind::Tie => "tie",
            BranchKind::Higher => "higher",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub price: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub kind: BranchKind,
    /// Grid-aligned price range the expression applies to, inclusive.
    pub lo: f64,
    pub hi: f64,
    pub expression: String,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPrediction {
    pub label: TreatmentLabel,
    pub params: GameParams,
    pub p_tilde: f64,
    pub support_start: f64,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub rows: Vec<TreatmentPrediction>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn grid(v: f64) -> String {
    format!("{v:.1}")
}

/// `a - b/p` (or `a + b/p`) rendering.
fn affine_in_inverse_price(a: f64, b: f64) -> String {
    if b.abs() < 1e-12 {
        num(a)
    } else if b > 0.0 {
        format!("{} - {}/p", num(a), num(b))
    } else {
        format!("{} + {}/p", num(a), num(-b))
    }
}

fn cdf_expression(params: &GameParams) -> String {
    let (c, r, dh, dl, x) = (
        params.cost,
        params.reserve,
        params.demand_high,
        params.demand_low,
        params.half_width,
    );
    // F = 1 - (r - p)(A p - B) / (K p (p - c)); divide through by the common
    // factor of the p-coefficients, then scale by a power of ten until the
    // constant is integral
    let mut a = dl * r;
    let mut b = c * c * x;
    let mut k = r * (dh - dl);
    let integral = |v: f64| (v - v.round()).abs() < 1e-9 && v >= 0.0;
    if integral(a) && integral(k) {
        let g = gcd(a.round() as u64, k.round() as u64).max(1) as f64;
        a /= g;
        b /= g;
        k /= g;
        if let Some(m) = [1.0, 10.0, 100.0, 1000.0].into_iter().find(|m| integral(b * m)) {
            a *= m;
            b *= m;
            k *= m;
        }
    }
    let coef = |v: f64| if (v - 1.0).abs() < 1e-12 { String::new() } else { num(v) };
    let inner = if b.abs() < 1e-12 {
        format!("{}p", coef(a))
    } else {
        format!("{}p - {}", coef(a), num(b))
    };
    format!(
        "1 - ({} - p)({})/({}p(p - {}))",
        num(r),
        inner,
        coef(k),
        num(c)
    )
}

fn probes(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> Vec<Probe> {
    if (hi - lo).abs() < 1e-12 {
        return vec![Probe { price: lo, value: f(lo) }];
    }
    (0..PROBES_PER_BRANCH)
        .map(|k| {
            let price = lo + (hi - lo) * k as f64 / (PROBES_PER_BRANCH - 1) as f64;
            Probe { price, value: f(price) }
        })
        .collect()
}

/// Largest grid price strictly below `b`.
fn grid_below(params: &GameParams, b: f64) -> f64 {
    let d = params.grid_floor(b);
    if (d - b).abs() < 1e-9 {
        params.grid_value((d / params.price_step).round() as i64 - 1)
    } else {
        d
    }
}

/// Smallest grid price strictly above `b`.
fn grid_above(params: &GameParams, b: f64) -> f64 {
    let u = params.grid_ceil(b);
    if (u - b).abs() < 1e-9 {
        params.grid_value((u / params.price_step).round() as i64 + 1)
    } else {
        u
    }
}

fn tie_branches(params: &GameParams, start: f64) -> Vec<Branch> {
    let rule = TieQuantityRule::new(params);
    let (c, x) = (params.cost, params.half_width);
    let (dh, dl) = (params.demand_high, params.demand_low);
    let r = params.reserve;
    let mut out = Vec::new();
    let mut push = |lo: f64, hi: f64, regime: TieRegime| {
        let lo = lo.max(start);
        let hi = hi.min(r);
        if lo > hi + 1e-9 {
            return;
        }
        let expression = match regime {
            TieRegime::LowerInterior => affine_in_inverse_price(dl + 3.0 * x, 4.0 * c * x),
            TieRegime::Plateau => format!("[{}, {}]", num(dl + x), num(dh - x)),
            TieRegime::Middle => affine_in_inverse_price(0.5 * (dh + dl) + x, 2.0 * c * x),
            TieRegime::UpperInterior => affine_in_inverse_price(dh + x, 4.0 * c * x),
        };
        out.push(Branch {
            kind: BranchKind::Tie,
            lo,
            hi,
            expression,
            probes: probes(lo, hi, |p| rule.regime_value(regime, p).midpoint()),
        });
    };
    let (b1, b2) = (rule.lower_boundary, rule.upper_boundary);
    match rule.situation {
        TieSituation::NoOverlap => {
            push(start, grid_below(params, b1), TieRegime::LowerInterior);
            if params.is_grid_price(b1) {
                push(b1, b1, TieRegime::Plateau);
            }
            push(grid_above(params, b1), r, TieRegime::UpperInterior);
        }
        TieSituation::Overlap => {
            push(start, grid_below(params, b1), TieRegime::LowerInterior);
            push(params.grid_ceil(b1), params.grid_floor(b2), TieRegime::Middle);
            push(grid_above(params, b2), r, TieRegime::UpperInterior);
        }
    }
    out
}

pub fn treatment_prediction(treatment: &Treatment) -> Result<TreatmentPrediction> {
    let params = treatment.params;
    let eq = Equilibrium::solve(&params)?;
    let start = eq.grid_support_start();
    let r = params.reserve;
    let (c, x) = (params.cost, params.half_width);
    let mut branches = Vec::new();

    let first = params.snap_up(c);
    let below = grid_below(&params, start);
    if below >= first {
        branches.push(Branch {
            kind: BranchKind::CdfZero,
            lo: first,
            hi: below,
            expression: "0".to_string(),
            probes: probes(first, below, |p| eq.cdf(p)),
        });
    }
    branches.push(Branch {
        kind: BranchKind::Cdf,
        lo: start,
        hi: r,
        expression: cdf_expression(&params),
        probes: probes(start, r, |p| eq.cdf(p)),
    });
    let q_branch = |kind: BranchKind, segment: Segment| Branch {
        kind,
        lo: start,
        hi: r,
        expression: affine_in_inverse_price(params.segment_mean(segment) + x, 2.0 * c * x),
        probes: probes(start, r, |p| {
            optimal_quantity(&params, p, segment).expect("support prices are positive")
        }),
    };
    branches.push(q_branch(BranchKind::Lower, Segment::High));
    branches.extend(tie_branches(&params, start));
    branches.push(q_branch(BranchKind::Higher, Segment::Low));

    Ok(TreatmentPrediction {
        label: treatment.label,
        params,
        p_tilde: eq.p_tilde,
        support_start: start,
        branches,
    })
}

pub fn prediction_table(treatments: &[Treatment]) -> Result<PredictionTable> {
    if treatments.is_empty() {
        return Err(Error::Empty("prediction table needs at least one treatment".into()));
    }
    let rows = treatments.iter().map(treatment_prediction).collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable { rows })
}

impl PredictionTable {
    /// Plain-text layout used for the golden file and the `table` command.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let p = &row.params;
            let _ = writeln!(
                out,
                "{}  c={} r={} d_H={} d_L={} x={}  p_tilde={:.6}  support=[{}, {}]",
                row.label,
                num(p.cost),
                num(p.reserve),
                num(p.demand_high),
                num(p.demand_low),
                num(p.half_width),
                row.p_tilde,
                grid(row.support_start),
                grid(p.reserve)
            );
            for b in &row.branches {
                let name = match b.kind {
                    BranchKind::CdfZero | BranchKind::Cdf => "F*(p)",
                    BranchKind::Lower => "q*(p) p<p_j",
                    BranchKind::Tie => "q*(p) p=p_j",
                    BranchKind::Higher => "q*(p) p>p_j",
                };
                let _ = writeln!(
                    out,
                    "  {:<12} [{}, {}]  {}",
                    name,
                    grid(b.lo),
                    grid(b.hi),
                    b.expression
                );
                let probes: Vec<String> = b
                    .probes
                    .iter()
                    .map(|pr| format!("{:.4}:{:.9}", pr.price, pr.value))
                    .collect();
                let _ = writeln!(out, "  {:<12} {}", "", probes.join(" "));
            }
            out.push('\n');
        }
        out
    }

    /// Tab-separated probe listing: treatment, branch, range, then
    /// `price value` pairs at full precision.
    pub fn probe_tsv(&self) -> String {
        let mut out = String::from("treatment\tbranch\tlo\thi\tprobes\n");
        for row in &self.rows {
            for b in &row.branches {
                let probes: Vec<String> = b
                    .probes
                    .iter()
                    .map(|pr| format!("{:?} {:?}", pr.price, pr.value))
                    .collect();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    row.label,
                    b.kind.as_str(),
                    grid(b.lo),
                    grid(b.hi),
                    probes.join(" ")
                );
            }
        }
        out
    }
}
