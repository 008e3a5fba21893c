//! Hour-aggregated decision process: aggregation, state vectors, and the
//! cross-day consistency checks that justify treating days as interchangeable.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width of the feature vector fed to the Q-network.
pub const FEATURE_DIM: usize = 15;

/// Decision steps per day.
pub const STEPS_PER_DAY: usize = 24;

/// Upper clip applied to normalised count and money features.
pub const FEATURE_CLIP: f64 = 10.0;

/// Substitutability threshold on the squared relative distance.
pub const SUBSTITUTE_RATIO: f64 = 0.01;

/// Cross-day deviation band under which aggregated features are treated as stable.
pub const STABLE_ETA: f64 = 0.03;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "budget_left",
    "step",
    "impressions",
    "wins",
    "clicks",
    "purchases",
    "cost",
    "pur_amt",
    "ctr",
    "cvr",
    "ppc",
    "avg_pcvr",
    "avg_rank",
    "win_rate",
    "alpha",
];

/// What one advertiser saw in one auction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdImpression {
    pub pcvr: f64,
    pub bid: f64,
    /// Slot position if the ad was shown.
    pub rank: Option<u32>,
    pub price_per_click: f64,
    pub clicked: bool,
    pub purchased: bool,
    pub purchase_amount: f64,
}

impl AdImpression {
    pub fn cost(&self) -> f64 {
        if self.clicked {
            self.price_per_click
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HourAggregate {
    pub impressions: u64,
    pub wins: u64,
    pub clicks: u64,
    pub purchases: u64,
    pub cost: f64,
    pub pur_amt: f64,
    pub ctr: f64,
    pub cvr: f64,
    pub ppc: f64,
    pub avg_pcvr: f64,
    pub avg_rank: f64,
    pub win_rate: f64,
}

/// Streaming builder for [`HourAggregate`].
#[derive(Clone, Debug, Default)]
pub struct HourAccumulator {
    impressions: u64,
    wins: u64,
    clicks: u64,
    purchases: u64,
    cost: f64,
    pur_amt: f64,
    won_pcvr: f64,
    rank_sum: f64,
}

impl HourAccumulator {
    pub fn push(&mut self, imp: &AdImpression) {
        self.impressions += 1;
        if let Some(rank) = imp.rank {
            self.wins += 1;
            self.won_pcvr += imp.pcvr;
            self.rank_sum += rank as f64;
        }
        if imp.clicked {
            self.clicks += 1;
            self.cost += imp.price_per_click;
        }
        if imp.purchased {
            self.purchases += 1;
            self.pur_amt += imp.purchase_amount;
        }
    }

    pub fn finish(&self) -> HourAggregate {
        let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
        HourAggregate {
            impressions: self.impressions,
            wins: self.wins,
            clicks: self.clicks,
            purchases: self.purchases,
            cost: self.cost,
            pur_amt: self.pur_amt,
            ctr: ratio(self.clicks as f64, self.impressions),
            cvr: ratio(self.purchases as f64, self.clicks),
            ppc: ratio(self.cost, self.clicks),
            avg_pcvr: ratio(self.won_pcvr, self.wins),
            avg_rank: ratio(self.rank_sum, self.wins),
            win_rate: ratio(self.wins as f64, self.impressions),
        }
    }
}

pub fn aggregate_hour(impressions: &[AdImpression]) -> HourAggregate {
    let mut acc = HourAccumulator::default();
    impressions.iter().for_each(|i| acc.push(i));
    acc.finish()
}

pub fn step_reward(aggregate: &HourAggregate) -> f64 {
    aggregate.pur_amt
}

/// Positive scale for each count and money feature, usually the mean hourly
/// value of a baseline policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub impressions: f64,
    pub wins: f64,
    pub clicks: f64,
    pub purchases: f64,
    pub cost: f64,
    pub pur_amt: f64,
    pub ppc: f64,
}

impl Default for FeatureNorms {
    fn default() -> Self {
        Self { impressions: 1.0, wins: 1.0, clicks: 1.0, purchases: 1.0, cost: 1.0, pur_amt: 1.0, ppc: 1.0 }
    }
}

impl FeatureNorms {
    /// Mean over the given hours; zero means fall back to 1.
    pub fn from_hours<'a>(hours: impl IntoIterator<Item = &'a HourAggregate>) -> Self {
        let mut sums = [0.0f64; 7];
        let mut n = 0usize;
        for h in hours {
            let v = [
                h.impressions as f64,
                h.wins as f64,
                h.clicks as f64,
                h.purchases as f64,
                h.cost,
                h.pur_amt,
                h.ppc,
            ];
            sums.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            n += 1;
        }
        let m = |s: f64| if n == 0 || s <= 0.0 { 1.0 } else { s / n as f64 };
        Self {
            impressions: m(sums[0]),
            wins: m(sums[1]),
            clicks: m(sums[2]),
            purchases: m(sums[3]),
            cost: m(sums[4]),
            pur_amt: m(sums[5]),
            ppc: m(sums[6]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.impressions, self.wins, self.clicks, self.purchases, self.cost, self.pur_amt, self.ppc];
        if all.iter().all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("feature normalisers must be positive: {self:?}")))
        }
    }
}

/// Fixed per-advertiser quantities needed to scale a state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateScale {
    pub budget: f64,
    pub alpha_max: f64,
    pub slot_count: u32,
    pub steps: usize,
}

/// `<b, t, g>`: budget left, 1-based step index, aggregated feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpState {
    pub b: f64,
    pub t: usize,
    pub g: [f64; FEATURE_DIM],
}

impl MdpState {
    pub fn new(b: f64, t: usize, g: [f64; FEATURE_DIM]) -> Result<Self> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::Contract(format!("budget left {b} must be finite and non-negative")));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("feature {} is not finite", FEATURE_NAMES[i])));
        }
        Ok(Self { b, t, g })
    }
}

/// The unnormalised feature vector. Used directly for the consistency check, so
/// clipping cannot hide cross-day differences.
pub fn raw_features(b: f64, t: usize, agg: &HourAggregate, prev_alpha: f64, scale: &StateScale) -> [f64; FEATURE_DIM] {
    [
        b / scale.budget,
        t as f64 / scale.steps as f64,
        agg.impressions as f64,
        agg.wins as f64,
        agg.clicks as f64,
        agg.purchases as f64,
        agg.cost,
        agg.pur_amt,
        agg.ctr,
        agg.cvr,
        agg.ppc,
        agg.avg_pcvr,
        agg.avg_rank / scale.slot_count as f64,
        agg.win_rate,
        prev_alpha / scale.alpha_max,
    ]
}

/// Indices of the features divided by a normaliser and clipped to `[0, FEATURE_CLIP]`.
const NORMALISED: [usize; 7] = [2, 3, 4, 5, 6, 7, 10];

pub fn build_state(
    b: f64,
    t: usize,
    aggregate: &HourAggregate,
    prev_alpha: f64,
    scale: &StateScale,
    norms: &FeatureNorms,
) -> Result<MdpState> {
    norms.validate()?;
    if !(scale.budget > 0.0) || !(scale.alpha_max > 0.0) || scale.slot_count == 0 || scale.steps == 0 {
        return Err(Error::Config(format!("invalid state scale {scale:?}")));
    }
    let mut g = raw_features(b, t, aggregate, prev_alpha, scale);
    let divisors = [norms.impressions, norms.wins, norms.clicks, norms.purchases, norms.cost, norms.pur_amt, norms.ppc];
    for (&i, d) in NORMALISED.iter().zip(divisors) {
        g[i] = (g[i] / d).clamp(0.0, FEATURE_CLIP);
    }
    MdpState::new(b, t, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub ratio: f64,
    pub substitutable: bool,
}

/// `‖x−y‖² / min(‖x‖², ‖y‖²)`; substitutable below 0.01.
pub fn similarity(x: &[f64], y: &[f64]) -> Result<SimilarityReport> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let denom = sq(x).min(sq(y));
    if denom == 0.0 {
        return Err(Error::InvalidInput("similarity of a zero vector is undefined".into()));
    }
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let ratio = diff / denom;
    Ok(SimilarityReport { ratio, substitutable: ratio < SUBSTITUTE_RATIO })
}

/// Worst-case substitution ratio between two values inside a ±η band: `(2η/(1−η))²`.
pub fn eta_bound(eta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Contract(format!("eta {eta} outside [0, 1)")));
    }
    let r = 2.0 * eta / (1.0 - eta);
    Ok(r * r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellReport {
    pub feature: usize,
    pub step: usize,
    /// `None` when the cross-day mean is zero and the cell is excluded.
    pub eta_hat: Option<f64>,
    /// Actual substitution ratio of the two observed values.
    pub ratio: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub cells: Vec<CellReport>,
}

impl ConsistencyReport {
    pub fn evaluated(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| c.eta_hat.is_some())
    }

    pub fn excluded(&self) -> usize {
        self.cells.iter().filter(|c| c.eta_hat.is_none()).count()
    }

    pub fn max_eta(&self) -> f64 {
        self.evaluated().filter_map(|c| c.eta_hat).fold(0.0, f64::max)
    }

    pub fn passing(&self) -> usize {
        self.evaluated().filter(|c| c.pass).count()
    }

    /// True when the whole day pair sits inside the stable band and, through the
    /// η bound, every pairwise ratio is within the substitution threshold.
    pub fn chain_holds(&self) -> bool {
        let eta = self.max_eta();
        eta < STABLE_ETA && eta_bound(eta).is_ok_and(|b| b <= SUBSTITUTE_RATIO)
    }

    pub fn write_csv<W: Write>(&self, pair: usize, w: &mut csv::Writer<W>) -> Result<()> {
        for c in &self.cells {
            w.write_record([
                pair.to_string(),
                FEATURE_NAMES[c.feature].to_string(),
                c.step.to_string(),
                c.eta_hat.map_or_else(|| "excluded".to_string(), |e| format!("{e:.6}")),
                c.pass.to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const CONSISTENCY_CSV_HEADER: [&str; 5] = ["pair", "feature", "step", "eta_hat", "pass"];

/// Per-cell relative deviation from the cross-day mean for two days run under the
/// same action sequence. `day_a[t]` holds the raw features after step `t + 1`.
pub fn consistency_check(
    day_a: &[[f64; FEATURE_DIM]],
    day_b: &[[f64; FEATURE_DIM]],
    actions: &[usize],
) -> Result<ConsistencyReport> {
    if day_a.len() != day_b.len() || day_a.len() != actions.len() {
        return Err(Error::Contract(format!(
            "day lengths {} / {} do not match {} actions",
            day_a.len(),
            day_b.len(),
            actions.len()
        )));
    }
    let mut cells = Vec::with_capacity(day_a.len() * FEATURE_DIM);
    for (t, (a, b)) in day_a.iter().zip(day_b).enumerate() {
        for i in 0..FEATURE_DIM {
            let mean = 0.5 * (a[i] + b[i]);
            let cell = if mean.abs() <= f64::EPSILON {
                CellReport { feature: i, step: t + 1, eta_hat: None, ratio: None, pass: false }
            } else {
                let eta = (a[i] - mean).abs().max((b[i] - mean).abs()) / mean.abs();
                let ratio = similarity(&[a[i]], &[b[i]]).ok().map(|r| r.ratio);
                CellReport { feature: i, step: t + 1, eta_hat: Some(eta), ratio, pass: eta < STABLE_ETA }
            };
            cells.push(cell);
        }
    }
    Ok(ConsistencyReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scale() -> StateScale {
        StateScale { budget: 100.0, alpha_max: 10.0, slot_count: 3, steps: 24 }
    }

    fn imp(clicked: bool, price: f64, purchase: Option<f64>) -> AdImpression {
        AdImpression {
            pcvr: 0.1,
            bid: 1.0,
            rank: Some(1),
            price_per_click: price,
            clicked,
            purchased: purchase.is_some(),
            purchase_amount: purchase.unwrap_or(0.0),
        }
    }

    #[test]
    fn aggregate_ratios() {
        let agg = aggregate_hour(&[imp(true, 0.8, None), imp(false, 0.5, None)]);
        assert_eq!(agg.impressions, 2);
        assert_eq!(agg.ctr, 0.5);
        assert!((agg.ppc - 0.8).abs() < 1e-12);
        assert!((agg.cost - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_hour_is_all_zero() {
        assert_eq!(aggregate_hour(&[]), HourAggregate::default());
    }

    #[test]
    fn single_purchase() {
        let agg = aggregate_hour(&[imp(true, 1.0, Some(30.0))]);
        assert_eq!(agg.cvr, 1.0);
        assert_eq!(agg.pur_amt, 30.0);
        assert_eq!(step_reward(&agg), 30.0);
    }

    #[test]
    fn reward_sums_purchase_amounts() {
        let agg = aggregate_hour(&[imp(true, 1.0, Some(30.0)), imp(true, 1.0, Some(12.0)), imp(true, 1.0, None)]);
        assert_eq!(step_reward(&agg), 42.0);
        assert_eq!(step_reward(&aggregate_hour(&[imp(true, 1.0, None)])), 0.0);
    }

    #[test]
    fn episode_reward_is_total_purchase_amount() {
        let hours: Vec<Vec<AdImpression>> = (0..24)
            .map(|h| (0..h % 3).map(|k| imp(true, 0.5, Some((h * 10 + k) as f64))).collect())
            .collect();
        let by_step: f64 = hours.iter().map(|h| step_reward(&aggregate_hour(h))).sum();
        let direct: f64 = hours.iter().flatten().map(|i| i.purchase_amount).sum();
        assert_eq!(by_step, direct);
    }

    #[test]
    fn initial_state_from_zero_aggregate() {
        let s = build_state(100.0, 1, &HourAggregate::default(), 5.0, &scale(), &FeatureNorms::default()).unwrap();
        let mut expected = [0.0; FEATURE_DIM];
        expected[0] = 1.0;
        expected[1] = 1.0 / 24.0;
        expected[14] = 0.5;
        assert_eq!(s.g, expected);
    }

    #[test]
    fn normalisation_and_clip() {
        let agg = HourAggregate { impressions: 50, wins: 400, ..Default::default() };
        let norms = FeatureNorms { impressions: 25.0, wins: 2.0, ..Default::default() };
        let s = build_state(50.0, 3, &agg, 0.0, &scale(), &norms).unwrap();
        assert_eq!(s.g[2], 2.0);
        assert_eq!(s.g[3], FEATURE_CLIP);
    }

    #[test]
    fn non_positive_normaliser_is_a_config_error() {
        let norms = FeatureNorms { cost: 0.0, ..Default::default() };
        let err = build_state(1.0, 1, &HourAggregate::default(), 0.0, &scale(), &norms).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn similarity_examples() {
        let same = similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(same.ratio, 0.0);
        assert!(same.substitutable);
        let close = similarity(&[1.0, 0.0], &[1.05, 0.0]).unwrap();
        assert!((close.ratio - 0.0025).abs() < 1e-12);
        assert!(close.substitutable);
        let far = similarity(&[1.0, 0.0], &[1.2, 0.0]).unwrap();
        assert!((far.ratio - 0.04).abs() < 1e-12);
        assert!(!far.substitutable);
        assert!(similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn eta_bound_values() {
        assert_eq!(eta_bound(0.0).unwrap(), 0.0);
        let b = eta_bound(0.03).unwrap();
        assert!((b - 0.0036 / 0.9409).abs() < 1e-15, "{b}");
        assert!((b - 0.003_826_6).abs() < 1e-6);
        assert!(b <= 0.01);
        let crossing = 0.1 / 2.1;
        assert!((eta_bound(crossing).unwrap() - 0.01).abs() < 1e-12);
        assert!(eta_bound(1.0).is_err());
        assert!(eta_bound(-0.1).is_err());
    }

    fn day(seed: f64) -> Vec<[f64; FEATURE_DIM]> {
        (0..24)
            .map(|t| std::array::from_fn(|i| 1.0 + seed * (t * FEATURE_DIM + i) as f64))
            .collect()
    }

    #[test]
    fn identical_days_have_zero_eta() {
        let a = day(0.1);
        let r = consistency_check(&a, &a, &[3; 24]).unwrap();
        assert!(r.evaluated().all(|c| c.eta_hat == Some(0.0)));
        assert_eq!(r.passing(), 24 * FEATURE_DIM);
        assert!(r.chain_holds());
    }

    #[test]
    fn scaled_day_gives_uniform_eta() {
        let a = day(0.1);
        let b: Vec<_> = a.iter().map(|row| row.map(|v| v * 1.02)).collect();
        let r = consistency_check(&a, &b, &[0; 24]).unwrap();
        let expected = (1.02 - 1.01) / 1.01;
        for c in r.evaluated() {
            assert!((c.eta_hat.unwrap() - expected).abs() < 1e-12);
        }
        assert!((expected - 0.0099).abs() < 1e-4);
    }

    #[test]
    fn zero_mean_cells_are_excluded() {
        let a = vec![[0.0; FEATURE_DIM]];
        let r = consistency_check(&a, &a, &[0]).unwrap();
        assert_eq!(r.excluded(), FEATURE_DIM);
        assert!(consistency_check(&a, &a, &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric(x in proptest::collection::vec(0.1f64..10.0, 1..8), d in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, e)| a + e).collect();
            if let (Ok(xy), Ok(yx)) = (similarity(&x, &y), similarity(&y, &x)) {
                prop_assert!((xy.ratio - yx.ratio).abs() <= 1e-12 * xy.ratio.max(1.0));
            }
            prop_assert_eq!(similarity(&x, &x).unwrap().ratio, 0.0);
        }

        #[test]
        fn eta_bound_is_increasing(a in 0.0f64..0.99, b in 0.0f64..0.99) {
            prop_assume!(a < b);
            prop_assert!(eta_bound(a).unwrap() < eta_bound(b).unwrap());
        }

        #[test]
        fn state_is_bounded(
            imps in 0u64..10_000, wins in 0u64..100, clicks in 0u64..100, cost in 0.0f64..1e4,
            b_frac in 0.0f64..1.0, t in 1usize..=24, alpha in 0.0f64..10.0,
        ) {
            let agg = HourAggregate {
                impressions: imps, wins, clicks, cost, ctr: 0.3, ppc: 1.5, avg_rank: 2.0, win_rate: 0.4,
                ..Default::default()
            };
            let s = build_state(100.0 * b_frac, t, &agg, alpha, &scale(), &FeatureNorms::default()).unwrap();
            prop_assert_eq!(s.g.len(), FEATURE_DIM);
            prop_assert!((0.0..=1.0).contains(&s.g[0]));
            for v in &s.g[2..] {
                prop_assert!((0.0..=FEATURE_CLIP).contains(v));
            }
        }

        #[test]
        fn stable_band_implies_substitutable(
            g in 0.1f64..100.0, eta in 0.0f64..0.03, u in -1.0f64..1.0, v in -1.0f64..1.0,
        ) {
            // two values inside [(1-η)ḡ, (1+η)ḡ]
            let a = g * (1.0 + eta * u);
            let b = g * (1.0 + eta * v);
            let ratio = similarity(&[a], &[b]).unwrap().ratio;
            prop_assert!(ratio <= eta_bound(eta).unwrap() + 1e-12);
            prop_assert!(ratio < SUBSTITUTE_RATIO);
        }
    }
}
