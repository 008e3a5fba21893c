use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::mix_seed;
use super::profile::{DayProfile, MarketAd};
use crate::auction::{AdId, AuctionRequest, KeywordId, Participant};
use crate::{Error, Result};

/// One day of auctions in timestamp order.
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionLog {
    pub day: u64,
    pub auctions: Vec<AuctionRequest>,
}

#[derive(Serialize, Deserialize)]
struct LogLine<'a> {
    day: u64,
    #[serde(flatten)]
    auction: std::borrow::Cow<'a, AuctionRequest>,
}

impl AuctionLog {
    pub fn validate(&self) -> Result<()> {
        let mut last = 0.0;
        for a in &self.auctions {
            a.validate()?;
            if a.timestamp < last {
                return Err(Error::InvalidInput(format!("day {}: timestamps out of order", self.day)));
            }
            last = a.timestamp;
        }
        Ok(())
    }

    /// Index range of each hour's auctions.
    pub fn hour_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::with_capacity(24);
        let mut start = 0;
        for h in 0..24 {
            let end = start + self.auctions[start..].iter().take_while(|a| a.hour() == h).count();
            ranges.push(start..end);
            start = end;
        }
        ranges
    }

    /// Only the auctions in which at least one of `ads` takes part.
    pub fn involving(&self, ads: &[AdId]) -> AuctionLog {
        let auctions = self
            .auctions
            .iter()
            .filter(|a| a.participants.iter().any(|p| ads.contains(&p.ad)))
            .cloned()
            .collect();
        AuctionLog { day: self.day, auctions }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for a in &self.auctions {
            serde_json::to_writer(&mut w, &LogLine { day: self.day, auction: std::borrow::Cow::Borrowed(a) })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a line-delimited log. An empty file yields day `0` with no auctions.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut day = None;
        let mut auctions = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine<'static> = serde_json::from_str(&line)?;
            match day {
                None => day = Some(parsed.day),
                Some(d) if d != parsed.day => {
                    return Err(Error::InvalidInput(format!("log mixes days {d} and {}", parsed.day)));
                }
                _ => {}
            }
            auctions.push(parsed.auction.into_owned());
        }
        let log = AuctionLog { day: day.unwrap_or(0), auctions };
        log.validate()?;
        Ok(log)
    }
}

struct KeywordMarket {
    keyword: KeywordId,
    ads: Vec<usize>,
}

/// Seeded day generator; every hour has its own random stream so hours can be
/// produced independently.
pub struct DayGenerator<'a> {
    seed: u64,
    profile: &'a DayProfile,
    ads: &'a [MarketAd],
    markets: Vec<KeywordMarket>,
    /// `pcvr[ad][hour]`, with the hour's mean used for the CTR link.
    pcvr: Vec<Vec<(Beta<f64>, f64)>>,
    competitor_bids: Vec<LogNormal<f64>>,
    competitor_ids: Vec<AdId>,
}

impl<'a> DayGenerator<'a> {
    pub fn new(seed: u64, profile: &'a DayProfile, ads: &'a [MarketAd]) -> Result<Self> {
        profile.validate()?;
        let mut by_keyword: BTreeMap<KeywordId, Vec<usize>> = BTreeMap::new();
        for (i, m) in ads.iter().enumerate() {
            m.ad.validate()?;
            m.traffic.validate()?;
            for kw in m.ad.keywords() {
                by_keyword.entry(kw.clone()).or_default().push(i);
            }
        }
        let markets = by_keyword.into_iter().map(|(keyword, ads)| KeywordMarket { keyword, ads }).collect();
        let pcvr = ads
            .iter()
            .map(|m| {
                profile
                    .hourly_cvr_multiplier
                    .iter()
                    .map(|mult| {
                        let mean = (m.traffic.pcvr_mean * mult).min(0.95);
                        let k = m.traffic.pcvr_concentration;
                        let beta = Beta::new(mean * k, (1.0 - mean) * k)
                            .map_err(|e| Error::Config(format!("pcvr beta for {}: {e}", m.ad.id)))?;
                        Ok((beta, mean))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let competitor_bids = profile
            .competitor_pool
            .iter()
            .map(|c| LogNormal::new(c.bid_log_mean, c.bid_log_sd).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let competitor_ids = (0..profile.competitor_pool.len()).map(|i| AdId::new(format!("~comp{i}"))).collect();
        Ok(Self { seed, profile, ads, markets, pcvr, competitor_bids, competitor_ids })
    }

    /// Auctions of hour `h`, sorted by timestamp.
    pub fn hour(&self, h: usize) -> Vec<AuctionRequest> {
        let rate = self.profile.hourly_intensity[h];
        if rate <= 0.0 || self.markets.is_empty() {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, h as u64));
        let arrivals = Poisson::new(rate).expect("positive rate");
        let mut out = Vec::new();
        for market in &self.markets {
            let n = arrivals.sample(&mut rng) as usize;
            out.reserve(n);
            for _ in 0..n {
                out.push(self.auction(&mut rng, h, market));
            }
        }
        out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out
    }

    fn auction(&self, rng: &mut ChaCha8Rng, h: usize, market: &KeywordMarket) -> AuctionRequest {
        let timestamp = h as f64 * 3600.0 + rng.random::<f64>() * 3600.0;
        let k = self.profile.competitors_per_auction;
        let mut participants = Vec::with_capacity(market.ads.len() + k);
        for &i in &market.ads {
            let m = &self.ads[i];
            let (beta, mean) = &self.pcvr[i][h];
            let pcvr: f64 = beta.sample(rng);
            let noise = rng.random_range(-0.1..=0.1);
            let true_cvr = (pcvr * (1.0 + noise)).clamp(0.0, 1.0);
            let true_ctr = (m.traffic.base_ctr * (0.75 + 0.25 * pcvr / mean)).clamp(0.0, 1.0);
            participants.push(Participant {
                ad: m.ad.id.clone(),
                bidscore: m.traffic.bidscore,
                pcvr,
                true_ctr,
                true_cvr,
                purchase_amount_mean: m.traffic.purchase_amount_mean,
                preset_bid: None,
            });
        }
        for c in index::sample(rng, self.profile.competitor_pool.len(), k) {
            let spec = &self.profile.competitor_pool[c];
            let bidscore = rng.random_range(spec.bidscore_low..=spec.bidscore_high);
            let bid = self.competitor_bids[c].sample(rng);
            participants.push(Participant {
                ad: self.competitor_ids[c].clone(),
                bidscore,
                pcvr: 0.0,
                true_ctr: spec.ctr,
                true_cvr: 0.0,
                purchase_amount_mean: 1.0,
                preset_bid: Some(bid),
            });
        }
        AuctionRequest {
            timestamp: timestamp.min(86_399.999),
            keyword: market.keyword.clone(),
            participants,
            slot_count: self.profile.slot_count,
            response_seed: rng.next_u64(),
        }
    }
}

/// Generate a whole day. Identical seeds give identical logs.
pub fn generate_day(seed: u64, profile: &DayProfile, ads: &[MarketAd]) -> Result<AuctionLog> {
    let generator = DayGenerator::new(seed, profile, ads)?;
    let auctions = (0..24).flat_map(|h| generator.hour(h)).collect();
    Ok(AuctionLog { day: seed, auctions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{Ad, KeywordTuple};
    use crate::simulator::AdTraffic;

    pub(crate) fn market_ad(id: &str, kws: &[&str]) -> MarketAd {
        let tuples = kws
            .iter()
            .map(|k| KeywordTuple { belong_ad: id.into(), keyword: (*k).into(), bidprice: 1.0 })
            .collect();
        MarketAd { ad: Ad::new(id.into(), tuples, 500.0, 10.0).unwrap(), traffic: AdTraffic::default() }
    }

    #[test]
    fn same_seed_same_log() {
        let ads = [market_ad("a", &["k1"])];
        let p = DayProfile::default();
        let a = generate_day(11, &p, &ads).unwrap();
        let b = generate_day(11, &p, &ads).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_day(12, &p, &ads).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn zero_intensity_gives_empty_log() {
        let mut p = DayProfile::default();
        p.hourly_intensity = vec![0.0; 24];
        let log = generate_day(3, &p, &[market_ad("a", &["k1"])]).unwrap();
        assert!(log.auctions.is_empty());
        assert!(log.hour_ranges().iter().all(|r| r.is_empty()));
    }

    #[test]
    fn morning_peak_exceeds_night_valley() {
        let ads = [market_ad("a", &["k1"])];
        let p = DayProfile::default();
        let (mut peak, mut valley) = (0usize, 0usize);
        for seed in 0..10 {
            let log = generate_day(seed, &p, &ads).unwrap();
            let r = log.hour_ranges();
            peak += r[9].len();
            valley += r[5].len();
        }
        assert!(peak > valley, "{peak} vs {valley}");
    }

    #[test]
    fn shared_keywords_put_ads_in_the_same_auction() {
        let ads = [market_ad("a", &["k1"]), market_ad("b", &["k1", "k2"])];
        let log = generate_day(5, &DayProfile::default(), &ads).unwrap();
        assert!(log.auctions.iter().any(|a| a.participant(&"a".into()).is_some() && a.participant(&"b".into()).is_some()));
        let only_a = log.involving(&["a".into()]);
        assert!(only_a.auctions.iter().all(|a| a.keyword.as_str() == "k1"));
    }

    #[test]
    fn hour_ranges_partition_the_log() {
        let log = generate_day(9, &DayProfile::default(), &[market_ad("a", &["k1"])]).unwrap();
        let r = log.hour_ranges();
        assert_eq!(r.last().unwrap().end, log.auctions.len());
        for (h, range) in r.iter().enumerate() {
            assert!(log.auctions[range.clone()].iter().all(|a| a.hour() == h));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let log = generate_day(21, &DayProfile::default(), &[market_ad("a", &["k1"])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.jsonl");
        log.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), log.auctions.len());
        assert_eq!(AuctionLog::read_jsonl(&path).unwrap(), log);
    }

    #[test]
    fn invalid_profile_is_rejected() {
        let mut p = DayProfile::default();
        p.hourly_intensity[5] = 1000.0;
        assert!(generate_day(1, &p, &[market_ad("a", &["k1"])]).is_err());
        let mut p = DayProfile::default();
        p.hourly_cvr_multiplier[0] = 0.0;
        assert!(p.validate().is_err());
    }
}
