//! Descriptive statistics over session logs: price dispersion, order
//! quantities by competition outcome, and the pull-to-center indices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{optimal_quantity, tie_optimal_quantity, Equilibrium, NeSummary};
use crate::error::{Error, Result};
use crate::market::{GameParams, OutcomeKind, PRICE_EPS};
use crate::simulation::{RoundRecord, SessionLog};

/// Orders closer than this to the anchor make the PtC ratio blow up and are
/// left out.
pub const DEFAULT_ANCHOR_EPS: f64 = 0.5;

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` below two observations.
pub fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = sorted(sample.to_vec());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSummary {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub iqr: f64,
    pub share_at_reserve: f64,
    pub share_below_threshold: f64,
}

impl PriceSummary {
    fn of(prices: Vec<f64>, params: &GameParams, threshold: f64) -> Self {
        let n = prices.len();
        let at_r = prices.iter().filter(|&&p| (p - params.reserve).abs() < PRICE_EPS).count();
        let below = prices.iter().filter(|&&p| p < threshold).count();
        let xs = sorted(prices);
        PriceSummary {
            n,
            median: quantile_sorted(&xs, 0.5),
            mean: mean(&xs),
            iqr: quantile_sorted(&xs, 0.75) - quantile_sorted(&xs, 0.25),
            share_at_reserve: at_r as f64 / n as f64,
            share_below_threshold: below as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceStats {
    pub groups: Vec<PriceSummary>,
    /// Each statistic computed per group, then averaged over groups.
    pub pooled: PriceSummary,
    pub ne: NeSummary,
}

fn records_by_group(log: &SessionLog) -> Vec<Vec<&RoundRecord>> {
    let mut out = vec![Vec::new(); log.groups.len()];
    for r in &log.records {
        out[r.group].push(r);
    }
    out
}

pub fn price_stats(log: &SessionLog, params: &GameParams) -> Result<PriceStats> {
    if log.records.is_empty() {
        return Err(Error::Empty("price statistics need at least one record".into()));
    }
    let eq = Equilibrium::solve(params)?;
    let mut groups = Vec::new();
    for (g, recs) in records_by_group(log).into_iter().enumerate() {
        if recs.is_empty() {
            return Err(Error::Empty(format!("group {g} has no records")));
        }
        groups.push(PriceSummary::of(recs.iter().map(|r| r.price).collect(), params, eq.p_tilde));
    }
    let avg = |f: fn(&PriceSummary) -> f64| groups.iter().map(f).sum::<f64>() / groups.len() as f64;
    let pooled = PriceSummary {
        n: groups.iter().map(|g| g.n).sum(),
        median: avg(|g| g.median),
        mean: avg(|g| g.mean),
        iqr: avg(|g| g.iqr),
        share_at_reserve: avg(|g| g.share_at_reserve),
        share_below_threshold: avg(|g| g.share_below_threshold),
    };
    Ok(PriceStats {
        groups,
        pooled,
        ne: eq.summary()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySplit {
    pub outcome: OutcomeKind,
    pub count: usize,
    pub mean_quantity: Option<f64>,
    /// Spread over individual decisions.
    pub sd_decisions: Option<f64>,
    /// Spread of the per-group means.
    pub sd_groups: Option<f64>,
    pub median_price: Option<f64>,
    /// Optimal order at the split's median price (tie rule midpoint for ties).
    pub optimal_at_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub splits: Vec<QuantitySplit>,
    pub total: usize,
}

impl QuantityStats {
    pub fn split(&self, outcome: OutcomeKind) -> &QuantitySplit {
        self.splits.iter().find(|s| s.outcome == outcome).expect("every outcome has a split")
    }
}

fn optimal_for(params: &GameParams, price: f64, outcome: OutcomeKind) -> Result<f64> {
    match outcome.segment() {
        Some(seg) => optimal_quantity(params, price, seg),
        None => Ok(tie_optimal_quantity(params, price)?.midpoint()),
    }
}

pub fn quantity_stats(log: &SessionLog, params: &GameParams) -> Result<QuantityStats> {
    let mut splits = Vec::new();
    for outcome in [OutcomeKind::Lower, OutcomeKind::Higher, OutcomeKind::Tie] {
        let recs: Vec<&RoundRecord> = log.records.iter().filter(|r| r.outcome.kind == outcome).collect();
        let qs: Vec<f64> = recs.iter().map(|r| r.quantity as f64).collect();
        let mut group_means = Vec::new();
        for g in 0..log.groups.len() {
            let gq: Vec<f64> = recs.iter().filter(|r| r.group == g).map(|r| r.quantity as f64).collect();
            if !gq.is_empty() {
                group_means.push(mean(&gq));
            }
        }
        let median_price = if recs.is_empty() {
            None
        } else {
            Some(quantile_sorted(&sorted(recs.iter().map(|r| r.price).collect()), 0.5))
        };
        let optimal_at_median = match median_price {
            Some(p) => Some(optimal_for(params, p, outcome)?),
            None => None,
        };
        splits.push(QuantitySplit {
            outcome,
            count: recs.len(),
            mean_quantity: (!qs.is_empty()).then(|| mean(&qs)),
            sd_decisions: sample_sd(&qs),
            sd_groups: sample_sd(&group_means),
            median_price,
            optimal_at_median,
        });
    }
    Ok(QuantityStats {
        splits,
        total: log.records.len(),
    })
}

/// `(q* - q) / (q - anchor)` for a non-tie round, or `None` when the order
/// sits within `eps` of the anchor or the round was a tie.
pub fn ptc_ratio(params: &GameParams, record: &RoundRecord, eps: f64) -> Result<Option<f64>> {
    let segment = match record.outcome.kind.segment() {
        Some(s) => s,
        None => return Ok(None),
    };
    let anchor = params.segment_mean(segment);
    let q = record.quantity as f64;
    if (q - anchor).abs() < eps {
        return Ok(None);
    }
    let optimal = optimal_quantity(params, record.price, segment)?;
    Ok(Some((optimal - q) / (q - anchor)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPtc {
    pub subject: usize,
    pub group: usize,
    /// Mean ratio over rounds priced below the opponent.
    pub alpha_lower: Option<f64>,
    /// Mean ratio over rounds priced above the opponent.
    pub alpha_higher: Option<f64>,
    pub n_lower: usize,
    pub n_higher: usize,
    pub excluded_lower: usize,
    pub excluded_higher: usize,
    pub pooled_sd: Option<f64>,
    /// `(alpha_lower - alpha_higher) / pooled_sd`.
    pub asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtcReport {
    pub anchor_eps: f64,
    pub subjects: Vec<SubjectPtc>,
    pub mean_alpha_lower: Option<f64>,
    pub mean_alpha_higher: Option<f64>,
    pub mean_asymmetry: Option<f64>,
    pub n_asymmetry: usize,
    /// Ratio averaged over all usable rounds of the class.
    pub pooled_ratio_lower: Option<f64>,
    pub pooled_ratio_higher: Option<f64>,
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

pub fn ptc_indices(log: &SessionLog, params: &GameParams, anchor_eps: f64) -> Result<PtcReport> {
    if !(anchor_eps > 0.0) {
        return Err(Error::InvalidParams(format!("anchor tolerance must be positive, got {anchor_eps}")));
    }
    let n = log.n_subjects();
    let mut lower: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut higher: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut excluded = vec![[0usize; 2]; n];
    for r in &log.records {
        let class = match r.outcome.kind {
            OutcomeKind::Lower => 0,
            OutcomeKind::Higher => 1,
            OutcomeKind::Tie => continue,
        };
        match ptc_ratio(params, r, anchor_eps)? {
            Some(v) if class == 0 => lower[r.subject].push(v),
            Some(v) => higher[r.subject].push(v),
            None => excluded[r.subject][class] += 1,
        }
    }
    let group_of = log.group_of();
    let mut subjects = Vec::with_capacity(n);
    for s in 0..n {
        let (lo, hi) = (&lower[s], &higher[s]);
        let alpha_lower = mean_opt(lo);
        let alpha_higher = mean_opt(hi);
        let pooled_sd = match (alpha_lower, alpha_higher) {
            (Some(a), Some(b)) if lo.len() + hi.len() > 2 => {
                let ss: f64 = lo.iter().map(|v| (v - a).powi(2)).sum::<f64>() + hi.iter().map(|v| (v - b).powi(2)).sum::<f64>();
                Some((ss / (lo.len() + hi.len() - 2) as f64).sqrt())
            }
            _ => None,
        };
        let asymmetry = match (alpha_lower, alpha_higher, pooled_sd) {
            (Some(a), Some(b), Some(sd)) if sd > 0.0 => Some((a - b) / sd),
            _ => None,
        };
        subjects.push(SubjectPtc {
            subject: s,
            group: group_of[s].unwrap_or(usize::MAX),
            alpha_lower,
            alpha_higher,
            n_lower: lo.len(),
            n_higher: hi.len(),
            excluded_lower: excluded[s][0],
            excluded_higher: excluded[s][1],
            pooled_sd,
            asymmetry,
        });
    }
    let collect = |f: fn(&SubjectPtc) -> Option<f64>| subjects.iter().filter_map(f).collect::<Vec<f64>>();
    let d = collect(|s| s.asymmetry);
    let all_lower: Vec<f64> = lower.concat();
    let all_higher: Vec<f64> = higher.concat();
    Ok(PtcReport {
        anchor_eps,
        mean_alpha_lower: mean_opt(&collect(|s| s.alpha_lower)),
        mean_alpha_higher: mean_opt(&collect(|s| s.alpha_higher)),
        mean_asymmetry: mean_opt(&d),
        n_asymmetry: d.len(),
        pooled_ratio_lower: mean_opt(&all_lower),
        pooled_ratio_higher: mean_opt(&all_higher),
        subjects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBin {
    /// 1-based quintile index (gaps where quintiles collapse).
    pub bin: usize,
    pub price_lo: f64,
    pub price_hi: f64,
    pub count: usize,
    pub mean_ratio: f64,
    pub sd_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileReport {
    pub lower: Vec<PriceBin>,
    pub higher: Vec<PriceBin>,
}

/// Bins `(price, value)` pairs by empirical price quintiles. A value lands in
/// bin `k` when exactly `k - 1` cutoffs lie strictly below its price; empty
/// bins are dropped, so heavy ties at one price yield fewer bins.
pub fn bin_by_quintile(points: &[(f64, f64)]) -> Vec<PriceBin> {
    if points.is_empty() {
        return Vec::new();
    }
    let prices = sorted(points.iter().map(|p| p.0).collect());
    let cuts: Vec<f64> = (1..5).map(|k| quantile_sorted(&prices, k as f64 / 5.0)).collect();
    let mut bins: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 5];
    for &(p, v) in points {
        let k = cuts.iter().filter(|&&c| c < p - PRICE_EPS).count();
        bins[k].push((p, v));
    }
    bins.into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(k, b)| {
            let vals: Vec<f64> = b.iter().map(|x| x.1).collect();
            PriceBin {
                bin: k + 1,
                price_lo: b.iter().map(|x| x.0).fold(f64::INFINITY, f64::min),
                price_hi: b.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max),
                count: b.len(),
                mean_ratio: mean(&vals),
                sd_ratio: sample_sd(&vals),
            }
        })
        .collect()
}

pub fn ptc_by_price_quintile(log: &SessionLog, params: &GameParams, anchor_eps: f64) -> Result<QuintileReport> {
    let mut lower = Vec::new();
    let mut higher = Vec::new();
    for r in &log.records {
        if let Some(v) = ptc_ratio(params, r, anchor_eps)? {
            match r.outcome.kind {
                OutcomeKind::Lower => lower.push((r.price, v)),
                _ => higher.push((r.price, v)),
            }
        }
    }
    Ok(QuintileReport {
        lower: bin_by_quintile(&lower),
        higher: bin_by_quintile(&higher),
    })
}

/// Two-sided sign test on successive differences of bin means: the p-value
/// for "no monotone trend".
pub fn trend_sign_test(bins: &[PriceBin]) -> f64 {
    let diffs: Vec<f64> = bins.windows(2).map(|w| w[1].mean_ratio - w[0].mean_ratio).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    let ups = diffs.iter().filter(|d| **d > 0.0).count();
    let k = ups.min(n - ups);
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let tail: f64 = (0..=k).map(|i| choose(n, i)).sum::<f64>() / 2f64.powi(n as i32);
    (2.0 * tail).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityGap {
    pub outcome: OutcomeKind,
    /// Mean order minus the optimal order at the split's median price.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeDeviation {
    pub median_gap: f64,
    pub iqr_gap: f64,
    pub mass_at_reserve: f64,
    pub mass_below_threshold: f64,
    pub quantity_gaps: Vec<QuantityGap>,
}

pub fn compare_to_ne(prices: &PriceStats, quantities: &QuantityStats) -> NeDeviation {
    NeDeviation {
        median_gap: prices.pooled.median - prices.ne.median,
        iqr_gap: prices.pooled.iqr - prices.ne.iqr,
        mass_at_reserve: prices.pooled.share_at_reserve,
        mass_below_threshold: prices.pooled.share_below_threshold,
        quantity_gaps: quantities
            .splits
            .iter()
            .map(|s| QuantityGap {
                outcome: s.outcome,
                gap: s.mean_quantity.zip(s.optimal_at_median).map(|(q, o)| q - o),
            })
            .collect(),
    }
}

pub fn ingest_csv(path: impl AsRef<std::path::Path>, params: Option<GameParams>) -> Result<SessionLog> {
    SessionLog::load_csv(path, params)
}

/// Everything `analyze` produces for one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub treatment: String,
    pub seed: u64,
    pub prices: PriceStats,
    pub quantities: QuantityStats,
    pub ptc: PtcReport,
    pub quintiles: QuintileReport,
    pub deviation: NeDeviation,
}

pub fn analyze(log: &SessionLog, anchor_eps: f64) -> Result<AnalysisReport> {
    let params = log.params();
    let prices = price_stats(log, params)?;
    let quantities = quantity_stats(log, params)?;
    let deviation = compare_to_ne(&prices, &quantities);
    Ok(AnalysisReport {
        treatment: log.treatment.label.as_str().to_string(),
        seed: log.seed,
        ptc: ptc_indices(log, params, anchor_eps)?,
        quintiles: ptc_by_price_quintile(log, params, anchor_eps)?,
        prices,
        quantities,
        deviation,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl AnalysisReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let p = &self.prices;
        let _ = writeln!(out, "Treatment {} (seed {})", self.treatment, self.seed);
        let _ = writeln!(out);
        let _ = writeln!(out, "Prices ({} groups, {} decisions)", p.groups.len(), p.pooled.n);
        let _ = writeln!(out, "  {:<22}{:>10}{:>10}", "", "observed", "NE");
        let _ = writeln!(out, "  {:<22}{:>10.3}{:>10.3}", "median", p.pooled.median, p.ne.median);
        let _ = writeln!(out, "  {:<22}{:>10.3}{:>10}", "mean", p.pooled.mean, "");
        let _ = writeln!(out, "  {:<22}{:>10.3}{:>10.3}", "IQR", p.pooled.iqr, p.ne.iqr);
        let _ = writeln!(out, "  {:<22}{:>10.3}{:>10.3}", "share at r", p.pooled.share_at_reserve, 0.0);
        let _ = writeln!(out, "  {:<22}{:>10.3}{:>10.3}", "share below threshold", p.pooled.share_below_threshold, 0.0);
        let _ = writeln!(out);
        let _ = writeln!(out, "Order quantities by price outcome");
        let _ = writeln!(
            out,
            "  {:<8}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "outcome", "n", "mean q", "sd dec", "sd grp", "med p", "q*", "gap"
        );
        for (s, g) in self.quantities.splits.iter().zip(&self.deviation.quantity_gaps) {
            let _ = writeln!(
                out,
                "  {:<8}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                s.outcome.as_str(),
                s.count,
                opt(s.mean_quantity, 2),
                opt(s.sd_decisions, 2),
                opt(s.sd_groups, 2),
                opt(s.median_price, 2),
                opt(s.optimal_at_median, 2),
                opt(g.gap, 2)
            );
        }
        let _ = writeln!(out);
        let t = &self.ptc;
        let _ = writeln!(out, "Pull-to-center (orders within {} of the anchor excluded)", t.anchor_eps);
        let _ = writeln!(out, "  mean alpha, lower-priced   {}", opt(t.mean_alpha_lower, 3));
        let _ = writeln!(out, "  mean alpha, higher-priced  {}", opt(t.mean_alpha_higher, 3));
        let _ = writeln!(out, "  mean asymmetry d           {} (n = {})", opt(t.mean_asymmetry, 3), t.n_asymmetry);
        for (name, bins) in [("lower-priced", &self.quintiles.lower), ("higher-priced", &self.quintiles.higher)] {
            let _ = writeln!(out, "  by price quintile, {name}:");
            for b in bins.iter() {
                let _ = writeln!(
                    out,
                    "    Q{} [{:.2}, {:.2}]  n={:<7} mean={:.3}  sd={}",
                    b.bin,
                    b.price_lo,
                    b.price_hi,
                    b.count,
                    b.mean_ratio,
                    opt(b.sd_ratio, 3)
                );
            }
        }
        out
    }
}
