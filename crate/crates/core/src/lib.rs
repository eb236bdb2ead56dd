//! Budgeted simultaneous share auctions: mechanisms, liquid welfare,
//! equilibrium verification, and the deviation-based welfare-bound audit.
//!
//! The crate models items split into `h` identical shares. Bidders carry
//! additive or XOS valuations plus hard budgets, bid on a discrete grid, and
//! face first-price, second-price, or house-clearing share auctions. On top
//! of the mechanics sit exact Nash verification (pure, mixed, finite-type
//! Bayesian), optimal liquid welfare (exhaustive and fractional relaxation),
//! the named lower-bound instance families, and the numerical audit of the
//! welfare-bound inequality chain.

pub mod deviations;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod instances;
pub mod llp;
pub mod mechanisms;
pub mod welfare;

pub use error::{Error, Result};
pub use game::{
    approx_eq, approx_le, validate_instance, Bidder, GameInstance, ShareBundle, Valuation, TOL,
};
pub use mechanisms::{
    check_no_overbidding, check_no_overbudget, outcome_distribution, run_first_price,
    run_house_clearing, run_mechanism, run_second_price, utility, Action, BidProfile, BidRow,
    Demand, DemandRow, HouseDemand, Mechanism, Outcome, TieBreakRule,
};
pub use welfare::{
    expected_liquid_welfare, liquid_welfare, lpoa, opt_exact, revenue, social_welfare,
    OptResult, WelfareReport,
};
pub use llp::{solve_llp, LlpSolution};
pub use equilibrium::{
    best_response_dynamics, deviation_space, enumerate_pure_equilibria, equilibrium_stats,
    profile_outcome_distribution, verify_bayesian_ne, verify_mixed_ne, verify_pure_actions,
    verify_pure_ne, BayesStrategy, BayesianGame, BrdResult, Deviation, DeviationSpace,
    EquilibriumStats, MixedProfile, MixedRow, SearchOptions, SpaceKind, Verdict,
};
pub use deviations::{
    audit_bounds, boosting_deviation, classify_bidders, expected_shares_won, floor_fraction,
    frac_indicator, llp_deviation, lpoa_constant, uniform_share_bid, AnalysisParams, AuditCheck,
    AuditReport, BidderClassification, DeviationKind, PriceDistribution,
};
pub use instances::{
    gen_mixed_lb, gen_mixed_shares_lb, gen_no_pure_ne, gen_rand_tiebreak_lb,
    gen_rand_tiebreak_shares_lb, gen_tightness, gen_tightness_first_price, CertifiedInstance,
};
