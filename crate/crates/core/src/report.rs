//! Audit deliverables: top-1 correlation distributions with baselines,
//! percentile tables, histogram data, memorization flags and a metric table.
//!
//! Percentiles use linear interpolation between order statistics: for `n`
//! sorted values and percentile `p`, position `h = (n - 1) p / 100` and the
//! result is `x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlate::{ComparisonPlan, TopKMatches};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;

/// Percentiles tabulated in every summary.
pub const PERCENTILES: [f64; 8] = [1.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0, 99.5];

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub percentiles: Vec<Percentile>,
    /// Contributing values, ascending.
    pub values: Vec<f64>,
}

impl DistributionSummary {
    pub fn percentile(&self, p: f64) -> Result<f64> {
        percentile_sorted(&self.values, p)
    }
}

/// Interpolated percentile of ascending `sorted` values, `p` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyDistribution("no values".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn summarize_values(values: &[f64], label: &str) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "{label}: no valid matches"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let percentiles = PERCENTILES
        .iter()
        .map(|&p| {
            Ok(Percentile {
                p,
                value: percentile_sorted(&sorted, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistributionSummary {
        label: label.to_string(),
        n,
        mean,
        median: percentile_sorted(&sorted, 50.0)?,
        min: sorted[0],
        max: sorted[n - 1],
        percentiles,
        values: sorted,
    })
}

/// Statistics over the top-1 correlation of every valid query.
pub fn summarize(matches: &[TopKMatches], label: &str) -> Result<DistributionSummary> {
    let values: Vec<f64> = matches
        .iter()
        .filter_map(|m| m.top1().map(|t| t.correlation))
        .collect();
    summarize_values(&values, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ThresholdRule {
    /// Percentile of the baseline distribution.
    Percentile(f64),
    Fixed(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Percentile(99.5)
    }
}

impl FromStr for ThresholdRule {
    type Err = Error;

    /// `percentile:99.5` or `fixed:0.95`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            Error::invalid(format!("bad rule {s:?}, expected percentile:P or fixed:V"))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad rule value in {s:?}")))?;
        match kind.trim() {
            "percentile" => Ok(ThresholdRule::Percentile(value)),
            "fixed" => Ok(ThresholdRule::Fixed(value)),
            other => Err(Error::invalid(format!("unknown rule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub provenance: String,
}

/// Turns a rule into a concrete cutoff. Percentile rules need `baseline`.
pub fn derive_threshold(
    baseline: Option<&DistributionSummary>,
    rule: ThresholdRule,
) -> Result<Threshold> {
    match rule {
        ThresholdRule::Fixed(v) => {
            if !v.is_finite() {
                return Err(Error::invalid("fixed threshold must be finite"));
            }
            Ok(Threshold {
                value: v,
                provenance: format!("fixed value {v}"),
            })
        }
        ThresholdRule::Percentile(p) => {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::invalid(format!("percentile {p} outside (0, 100)")));
            }
            let baseline = baseline
                .ok_or_else(|| Error::invalid("a percentile rule needs a baseline distribution"))?;
            Ok(Threshold {
                value: baseline.percentile(p)?,
                provenance: format!("percentile {p} of {} (n={})", baseline.label, baseline.n),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub query_id: String,
    pub reference_id: String,
    pub correlation: f64,
}

/// Top-1 pairs at or above `threshold`, highest first, ties by query id.
pub fn flag_memorized(matches: &[TopKMatches], threshold: f64) -> Vec<Flag> {
    let mut flags: Vec<Flag> = matches
        .iter()
        .filter_map(|m| {
            let top = m.top1()?;
            (top.correlation >= threshold).then(|| Flag {
                query_id: m.query_id.clone(),
                reference_id: top.reference_id.clone(),
                correlation: top.correlation,
            })
        })
        .collect();
    flags.sort_by(|a, b| {
        b.correlation
            .total_cmp(&a.correlation)
            .then_with(|| a.query_id.cmp(&b.query_id))
    });
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

/// Uniform bins over `[lo, hi]`, left-inclusive, last bin closed. NaN counts
/// as overflow.
pub fn histogram(values: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(hi > lo) {
        return Err(Error::invalid(format!(
            "empty histogram range [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|i| {
            if i == n_bins {
                hi
            } else {
                lo + width * i as f64
            }
        })
        .collect();
    let mut counts = vec![0u64; n_bins];
    let (mut underflow, mut overflow) = (0, 0);
    for &v in values {
        if v < lo {
            underflow += 1;
        } else if v > hi || v.is_nan() {
            overflow += 1;
        } else {
            let i = (((v - lo) / (hi - lo)) * n_bins as f64) as usize;
            counts[i.min(n_bins - 1)] += 1;
        }
    }
    Ok(Histogram {
        label: String::new(),
        edges,
        counts,
        underflow,
        overflow,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub fid: Option<f64>,
    pub is_mean: Option<f64>,
    pub is_std: Option<f64>,
    pub mean_highest_correlation: Option<f64>,
}

/// Top-k match lists from one query set against one reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub label: String,
    pub query: String,
    pub reference: String,
    pub plan: ComparisonPlan,
    pub matches: Vec<TopKMatches>,
}

impl MatchSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, None, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub plan: ComparisonPlan,
    pub summaries: Vec<DistributionSummary>,
    pub histograms: Vec<Histogram>,
    pub threshold: Threshold,
    pub flagged: Vec<Flag>,
    pub metrics_table: Option<MetricsTable>,
    /// Queries of the audited comparison, in evaluation order.
    pub sample_ids: Vec<String>,
    /// Constant queries that have no defined correlation.
    pub invalid_queries: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub rule: ThresholdRule,
    pub histogram_bins: usize,
    pub histogram_range: (f64, f64),
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            rule: ThresholdRule::default(),
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            histogram_range: (0.0, 1.0),
        }
    }
}

impl AuditReport {
    /// Assembles a report for `audited`; `baseline` (test vs train) sets the
    /// threshold under a percentile rule, `extra` sets are summarized only.
    pub fn build(
        audited: &MatchSet,
        baseline: Option<&MatchSet>,
        extra: &[&MatchSet],
        opts: &ReportOptions,
        metrics: Option<MetricsTable>,
    ) -> Result<Self> {
        let main = summarize(&audited.matches, &audited.label)?;
        let base = baseline
            .map(|b| summarize(&b.matches, &b.label))
            .transpose()?;
        let threshold = derive_threshold(base.as_ref(), opts.rule)?;
        let mut summaries = vec![main];
        summaries.extend(base);
        for set in extra {
            summaries.push(summarize(&set.matches, &set.label)?);
        }
        let histograms = summaries
            .iter()
            .map(|s| {
                let mut h = histogram(&s.values, opts.histogram_bins, opts.histogram_range)?;
                h.label = s.label.clone();
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        let metrics_table = metrics.map(|mut m| {
            m.mean_highest_correlation.get_or_insert(summaries[0].mean);
            m
        });
        Ok(Self {
            plan: audited.plan,
            flagged: flag_memorized(&audited.matches, threshold.value),
            threshold,
            summaries,
            histograms,
            metrics_table,
            sample_ids: audited.matches.iter().map(|m| m.query_id.clone()).collect(),
            invalid_queries: audited
                .matches
                .iter()
                .filter(|m| !m.query_valid)
                .map(|m| m.query_id.clone())
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Flagged pairs as CSV rows, followed by a `#`-prefixed summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,reference_id,correlation\n");
        for f in &self.flagged {
            let _ = writeln!(
                out,
                "{},{},{}",
                csv_field(&f.query_id),
                csv_field(&f.reference_id),
                fmt_sig6(f.correlation)
            );
        }
        out.push_str("# summary\n# label,n,mean,median,min,max");
        for p in PERCENTILES {
            let _ = write!(out, ",p{p}");
        }
        out.push('\n');
        for s in &self.summaries {
            let _ = write!(
                out,
                "# {},{},{},{},{},{}",
                csv_field(&s.label),
                s.n,
                fmt_sig6(s.mean),
                fmt_sig6(s.median),
                fmt_sig6(s.min),
                fmt_sig6(s.max)
            );
            for p in &s.percentiles {
                let _ = write!(out, ",{}", fmt_sig6(p.value));
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "# threshold,{},{}",
            fmt_sig6(self.threshold.value),
            csv_field(&self.threshold.provenance)
        );
        let _ = writeln!(out, "# comparisons,{}", self.plan.total_comparisons);
        if let Some(m) = &self.metrics_table {
            let cell = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_default();
            let _ = writeln!(out, "# metric,fid,is_mean,is_std,mean_highest_correlation");
            let _ = writeln!(
                out,
                "# metrics,{},{},{},{}",
                cell(m.fid),
                cell(m.is_mean),
                cell(m.is_std),
                cell(m.mean_highest_correlation)
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn export_report(
    report: &AuditReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<AuditReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, None, e.to_string()))
}

/// Six significant digits, fixed notation for magnitudes in `[1e-4, 1e6)`.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::Match;
    use proptest::prelude::*;

    fn tk(q: &str, r: &str, c: f64) -> TopKMatches {
        TopKMatches {
            query_id: q.into(),
            query_valid: true,
            matches: vec![Match {
                reference_id: r.into(),
                correlation: c,
            }],
            skipped_invalid: 0,
        }
    }

    #[test]
    fn summary_basics() {
        let m = [tk("a", "x", 0.5), tk("b", "x", 0.7), tk("c", "x", 0.9)];
        let s = summarize(&m, "s").unwrap();
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!((s.median - 0.7).abs() < 1e-15);
        let one = summarize(&[tk("a", "x", 1.0)], "one").unwrap();
        assert!([one.mean, one.median, one.min, one.max]
            .iter()
            .all(|&v| v == 1.0));
        assert!(one.percentiles.iter().all(|p| p.value == 1.0));
    }

    #[test]
    fn interpolated_95th() {
        let vals: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let s = summarize_values(&vals, "x").unwrap();
        assert!((s.percentile(95.0).unwrap() - 0.955).abs() < 1e-12);
    }

    #[test]
    fn all_invalid_is_empty_distribution() {
        let mut m = tk("a", "x", 0.5);
        m.matches.clear();
        m.query_valid = false;
        assert!(matches!(
            summarize(&[m], "s"),
            Err(Error::EmptyDistribution(_))
        ));
    }

    #[test]
    fn threshold_rules() {
        let base = summarize_values(&[0.5, 0.6, 0.7, 0.8, 0.9], "b").unwrap();
        assert_eq!(
            derive_threshold(Some(&base), ThresholdRule::Fixed(0.95))
                .unwrap()
                .value,
            0.95
        );
        let flat = summarize_values(&[0.42; 7], "f").unwrap();
        assert_eq!(
            derive_threshold(Some(&flat), ThresholdRule::default())
                .unwrap()
                .value,
            0.42
        );
        for p in [0.0, 100.0, -3.0] {
            assert!(derive_threshold(Some(&base), ThresholdRule::Percentile(p)).is_err());
        }
        assert!(derive_threshold(None, ThresholdRule::default()).is_err());
        assert_eq!(
            "fixed:0.9".parse::<ThresholdRule>().unwrap(),
            ThresholdRule::Fixed(0.9)
        );
        assert_eq!(
            "percentile:99.5".parse::<ThresholdRule>().unwrap(),
            ThresholdRule::Percentile(99.5)
        );
    }

    /// Order-statistic oracle: the interpolated percentile for 1000 sorted
    /// draws at p = 99.5 lies at zero-based position 999 * 0.995 = 994.005.
    #[test]
    fn percentile_995_of_1000() {
        let mut s = 0x2545F4914F6CDD1Du64;
        let draws: Vec<f64> = (0..1000)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let expected = sorted[994] + 0.005 * (sorted[995] - sorted[994]);
        let base = summarize_values(&draws, "b").unwrap();
        let t = derive_threshold(Some(&base), ThresholdRule::Percentile(99.5)).unwrap();
        assert!((t.value - expected).abs() < 1e-12);
    }

    #[test]
    fn flags() {
        let m = [tk("b", "x", 0.999), tk("a", "y", 0.999), tk("c", "z", 0.2)];
        let f = flag_memorized(&m, 0.99);
        let ids: Vec<_> = f.iter().map(|f| f.query_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(flag_memorized(&[], 0.5).is_empty());
        assert!(flag_memorized(&[tk("a", "x", 1.0)], 1.01).is_empty());
    }

    #[test]
    fn histogram_binning() {
        let h = histogram(&[0.0, 0.5, 1.0], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, [1, 2]);
        let h = histogram(&[], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, [0; 4]);
        let h = histogram(&[1.5, -0.1], 5, (0.0, 1.0)).unwrap();
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert_eq!(h.edges.len(), 6);
    }

    #[test]
    fn sig6() {
        assert_eq!(fmt_sig6(0.98510), "0.985100");
        assert_eq!(fmt_sig6(12.3456789), "12.3457");
        assert_eq!(fmt_sig6(-0.5), "-0.500000");
        assert_eq!(fmt_sig6(0.0), "0");
    }

    proptest! {
        #[test]
        fn flags_are_nested(vals in proptest::collection::vec(-1.0f64..1.0, 0..40), t1 in -1.0f64..1.0, dt in 0.0f64..1.0) {
            let m: Vec<_> = vals.iter().enumerate().map(|(i, &v)| tk(&format!("q{i}"), "r", v)).collect();
            let low: Vec<_> = flag_memorized(&m, t1).into_iter().map(|f| f.query_id).collect();
            for f in flag_memorized(&m, t1 + dt) {
                prop_assert!(low.contains(&f.query_id));
            }
        }

        #[test]
        fn histogram_conserves_count(vals in proptest::collection::vec(-0.5f64..1.5, 0..100), bins in 1usize..20) {
            let h = histogram(&vals, bins, (0.0, 1.0)).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>() + h.underflow + h.overflow, vals.len() as u64);
        }

        #[test]
        fn summary_percentiles_ordered(vals in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let s = summarize_values(&vals, "x").unwrap();
            let mut prev = s.min;
            for p in &s.percentiles {
                prop_assert!(p.value >= prev - 1e-15);
                prev = p.value;
            }
            prop_assert!(s.max >= prev - 1e-15);
        }
    }
}
