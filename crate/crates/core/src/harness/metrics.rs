use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::simulator::EpisodeResult;
use crate::Result;

const CSV_HEADER: [&str; 15] = [
    "ad",
    "algorithm",
    "split",
    "days",
    "cost",
    "pur_amt",
    "pur_amt_per_cost",
    "cvr",
    "roi",
    "ppc",
    "cost_ratio",
    "zero_click_days",
    "budget_conserved",
    "improvement",
    "valid",
];

/// Allowed relative deviation of an algorithm's spend from the KB budget.
pub const COST_TOLERANCE: f64 = 0.05;

pub fn relative_improvement(x: f64, kb: f64) -> f64 {
    if kb == 0.0 {
        0.0
    } else {
        (x - kb) / kb
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Day-averaged outcome of one algorithm for one ad.
///
/// `roi` is PUR_AMT/COST as well: this simulator attributes purchases the same
/// way for both, so the two columns coincide.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgoMetrics {
    pub days: usize,
    pub cost: f64,
    pub pur_amt: f64,
    pub pur_amt_per_cost: f64,
    pub cvr: f64,
    pub roi: f64,
    pub ppc: f64,
    /// Mean of cost / budget.
    pub cost_ratio: f64,
    pub zero_click_days: usize,
    /// Every day's budget left equals budget minus cost.
    pub budget_conserved: bool,
}

impl AlgoMetrics {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        let headline = mean(&|r| ratio(r.totals.pur_amt, r.totals.cost));
        Self {
            days: results.len(),
            cost: mean(&|r| r.totals.cost),
            pur_amt: mean(&|r| r.totals.pur_amt),
            pur_amt_per_cost: headline,
            cvr: mean(&|r| r.totals.cvr),
            roi: headline,
            ppc: mean(&|r| r.totals.ppc),
            cost_ratio: mean(&|r| ratio(r.totals.cost, r.budget)),
            zero_click_days: results.iter().filter(|r| r.totals.clicks == 0).count(),
            budget_conserved: results.iter().all(|r| r.budget_conserved()),
        }
    }

    pub fn equal_cost(&self) -> bool {
        (self.cost_ratio - 1.0).abs() <= COST_TOLERANCE
    }

    fn finite(&self) -> bool {
        [self.cost, self.pur_amt, self.pur_amt_per_cost, self.cvr, self.roi, self.ppc, self.cost_ratio]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub ad: String,
    pub algorithm: String,
    pub split: String,
    #[serde(flatten)]
    pub metrics: AlgoMetrics,
    pub improvement: f64,
    /// Cost within tolerance of the KB budget; rows failing it are not ranked.
    pub valid: bool,
}

/// Per ad, algorithm and split rows, always carrying the cost-ratio column.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// Add `metrics` for `algorithm`, with its improvement over `kb`.
    pub fn push(&mut self, ad: &str, algorithm: &str, split: &str, metrics: AlgoMetrics, kb: &AlgoMetrics) {
        let improvement = relative_improvement(metrics.pur_amt_per_cost, kb.pur_amt_per_cost);
        let valid = metrics.equal_cost();
        self.rows.push(MetricsRow {
            ad: ad.to_string(),
            algorithm: algorithm.to_string(),
            split: split.to_string(),
            metrics,
            improvement,
            valid,
        });
    }

    pub fn find(&self, ad: &str, algorithm: &str, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.ad == ad && r.algorithm == algorithm && r.split == split)
    }

    /// Mean improvement of `algorithm` on `split` over all ads.
    pub fn mean_improvement(&self, algorithm: &str, split: &str) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.split == split)
            .map(|r| r.improvement)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_headline(&self, algorithm: &str, split: &str) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.split == split)
            .map(|r| r.metrics.pur_amt_per_cost)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn all_valid(&self) -> bool {
        self.rows.iter().all(|r| r.valid)
    }

    /// Budgets conserved and every number finite. Equal-cost failures only mark
    /// rows invalid and do not break this.
    pub fn invariants_hold(&self) -> bool {
        self.rows.iter().all(|r| r.metrics.budget_conserved && r.metrics.finite() && r.improvement.is_finite())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.ad.clone(),
                r.algorithm.clone(),
                r.split.clone(),
                m.days.to_string(),
                m.cost.to_string(),
                m.pur_amt.to_string(),
                m.pur_amt_per_cost.to_string(),
                m.cvr.to_string(),
                m.roi.to_string(),
                m.ppc.to_string(),
                m.cost_ratio.to_string(),
                m.zero_click_days.to_string(),
                m.budget_conserved.to_string(),
                r.improvement.to_string(),
                r.valid.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<8} {:<6} {:>10} {:>10} {:>9} {:>9} {:>10} {:>6}",
            "ad", "algo", "split", "cost", "pur_amt", "pur/cost", "cost/c", "vs KB", "valid"
        )?;
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                f,
                "{:<10} {:<8} {:<6} {:>10.2} {:>10.2} {:>9.3} {:>9.3} {:>9.2}% {:>6}",
                r.ad,
                r.algorithm,
                r.split,
                m.cost,
                m.pur_amt,
                m.pur_amt_per_cost,
                m.cost_ratio,
                100.0 * r.improvement,
                if r.valid { "yes" } else { "NO" }
            )?;
        }
        Ok(())
    }
}
