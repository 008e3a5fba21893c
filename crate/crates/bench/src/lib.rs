//! Fixtures shared by the benchmarks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ssrtb_core::simulator::{AdTraffic, MarketAd};
use ssrtb_core::{Ad, KeywordTuple, MdpState, FEATURE_DIM};

pub fn market_ad(id: &str) -> MarketAd {
    let kw = KeywordTuple { belong_ad: id.into(), keyword: "k".into(), bidprice: 1.0 };
    MarketAd { ad: Ad::new(id.into(), vec![kw], 100.0, 10.0).unwrap(), traffic: AdTraffic::default() }
}

pub fn random_state(rng: &mut ChaCha8Rng) -> MdpState {
    let mut g = [0.0; FEATURE_DIM];
    g.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    MdpState::new(g[0], 1, g).unwrap()
}
