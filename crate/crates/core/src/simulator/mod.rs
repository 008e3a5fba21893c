//! Synthetic auction days and the market that replays bidding policies over them.

mod env;
mod generate;
mod market;
mod profile;

pub use env::{roster_from_logs, AmdpEnv, EnvBidder, LearnerStep, MarketEnv, RmdpEnv, TrainingDay};
pub use generate::{generate_day, AuctionLog, DayGenerator};
pub use market::{run_day, run_episode, Account, BidContext, BidPolicy, BudgetMode, EpisodeResult, HourView, Market};
pub use profile::{AdTraffic, CompetitorSpec, DayProfile, MarketAd};

/// SplitMix64 finaliser used to derive independent sub-seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
