//! Regret-based auction demand model.
//!
//! Bidders maximize expected profit net of anticipated winner regret (α) and
//! loser regret (β) against a belief about the highest competing bid. The
//! first-order condition turns each observed bid into a valuation, and a
//! log-scale affiliated-value state space ties those valuations to the
//! displayed board bid (ρ) and a per-bidder offset (δ). Only the ratio
//! (1 + α)/(1 + β) enters the valuation, so α and β are separated by the
//! hierarchy prior alone.

mod data;
mod fit;
mod model;

pub use data::{AuctionPanel, AuctionParams, AuctionTrace, Bid, BidderParams};
pub use fit::{
    affiliated_filter, affiliated_loglik, assemble_log_posterior, auction_lines, bid_line, count_line, epoch_moments, fit_auction,
    implied_valuations, initial_auction_params, wls_hierarchy, AuctionEstimates, AuctionFitConfig, AuctionLines, EpochBelief,
    Hierarchy, HierarchyConfig, PosteriorComponents, PosteriorOptions, VAR_FLOOR,
};
pub use model::{
    bidder_utility, expected_valuation, expected_valuation_variant, foc_valuation, foc_valuation_literal, foc_valuation_variant,
    foc_bid, max_bid_dist, optimal_bid, regret_integrals, valuation_moments, Expectation, MaxBidBelief, MaxBidDistribution, NormalMaxBid,
    UniformMaxBid, UtilityVariant,
};
