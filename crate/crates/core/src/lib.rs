//! Sponsored-search real-time bidding laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`auction`] ranks, prices and simulates user response for one impression.
//! * [`simulator`] generates seeded auction days and replays bidding policies over them.
//! * [`mdp`] turns hours of auction outcomes into the aggregated decision state.
//! * [`bidder`] holds the linear control-by-model bidder and the KB / AMDP baselines.
//! * [`dqn`] is a from-scratch deep Q-learner with train, episode and target networks.
//! * [`multiagent`] trains many bidders in a shared market with blended rewards.
//! * [`harness`] wires everything into reproducible experiments and reports.

pub mod auction;
pub mod bidder;
pub mod dqn;
mod error;
pub mod harness;
pub mod mdp;
pub mod multiagent;
pub mod simulator;

pub use auction::{Ad, AdId, AuctionConfig, AuctionOutcome, AuctionRequest, KeywordId, KeywordTuple, Participant};
pub use bidder::{ActionGrid, KbPolicy, LinearBidPolicy};
pub use dqn::{QNetwork, TrainerConfig, Transition};
pub use error::{Error, Result};
pub use mdp::{HourAggregate, MdpState, FEATURE_DIM};
pub use simulator::{AuctionLog, DayProfile, EpisodeResult};
