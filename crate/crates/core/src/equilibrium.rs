//! Nash equilibrium verification by exhaustive deviation checking over the
//! bid grid, best-response dynamics, and equilibrium statistics.
//!
//! Verdicts are exact: expectations over mixed strategies enumerate the joint
//! support, and uniform tie-breaking is expanded outcome by outcome with its
//! probabilities, never sampled.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameInstance, ShareBundle, Valuation, TOL};
use crate::mechanisms::{
    outcome_distribution_refs, Action, BidProfile, Demand, Mechanism, TieBreakRule,
};

/// Cap on the product of support sizes when enumerating joint supports.
pub const JOINT_SUPPORT_CAP: u64 = 1_000_000;
/// Cap on exact tie-outcome expansions per pure profile.
pub const OUTCOME_CAP: usize = 1_000_000;
/// Full-grid deviation rows beyond this fall back to the structured family.
pub const FULL_GRID_ROW_CAP: u64 = 10_000_000;
/// Hard cap on any deviation enumeration.
pub const SCAN_ROW_CAP: u64 = 200_000_000;

/// One bidder's mixed strategy: a finite support of actions with
/// probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRow {
    pub support: Vec<(Action, f64)>,
}

impl MixedRow {
    pub fn pure(action: Action) -> Self {
        MixedRow { support: vec![(action, 1.0)] }
    }
}

/// A mixed strategy profile over all bidders.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile {
    pub strategies: Vec<MixedRow>,
}

#[derive(Serialize, Deserialize)]
struct SupportPointDoc {
    prob: f64,
    #[serde(flatten)]
    action: Action,
}

#[derive(Serialize, Deserialize)]
struct MixedProfileDoc {
    strategies: Vec<Vec<SupportPointDoc>>,
}

impl MixedProfile {
    pub fn pure(actions: Vec<Action>) -> Self {
        MixedProfile { strategies: actions.into_iter().map(MixedRow::pure).collect() }
    }

    pub fn from_bid_profile(b: &BidProfile) -> Self {
        Self::pure(b.bids.iter().cloned().map(Action::Bids).collect())
    }

    /// The profile as a pure action vector, when every strategy is a point mass.
    pub fn as_pure(&self) -> Option<Vec<Action>> {
        self.strategies
            .iter()
            .map(|row| {
                let live: Vec<&(Action, f64)> =
                    row.support.iter().filter(|(_, p)| *p > TOL).collect();
                if live.len() == 1 { Some(live[0].0.clone()) } else { None }
            })
            .collect()
    }

    pub fn joint_support_size(&self) -> u64 {
        self.strategies
            .iter()
            .map(|row| row.support.iter().filter(|(_, p)| *p > TOL).count() as u64)
            .fold(1u64, |acc, k| acc.saturating_mul(k.max(1)))
    }

    /// Checks probabilities, dimensions and the bid grid; returns violations.
    pub fn validate(&self, g: &GameInstance) -> Vec<String> {
        let mut report = Vec::new();
        if self.strategies.len() != g.num_bidders() {
            report.push(format!(
                "{} strategies for {} bidders",
                self.strategies.len(),
                g.num_bidders()
            ));
            return report;
        }
        for (i, row) in self.strategies.iter().enumerate() {
            let total: f64 = row.support.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-6 {
                report.push(format!("bidder {i}: support probabilities sum to {total}"));
            }
            for (action, p) in &row.support {
                if *p < -TOL {
                    report.push(format!("bidder {i}: negative probability {p}"));
                }
                if let Some(msg) = validate_action(g, action) {
                    report.push(format!("bidder {i}: {msg}"));
                }
            }
        }
        report
    }

    pub fn to_json(&self) -> String {
        let doc = MixedProfileDoc {
            strategies: self
                .strategies
                .iter()
                .map(|row| {
                    row.support
                        .iter()
                        .map(|(action, p)| SupportPointDoc { prob: *p, action: action.clone() })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MixedProfileDoc =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("profile JSON: {e}")))?;
        Ok(MixedProfile {
            strategies: doc
                .strategies
                .into_iter()
                .map(|row| MixedRow {
                    support: row.into_iter().map(|pt| (pt.action, pt.prob)).collect(),
                })
                .collect(),
        })
    }
}

fn validate_action(g: &GameInstance, action: &Action) -> Option<String> {
    let step = g.bid_grid_step;
    let on_grid = |x: f64| {
        let units = x / step;
        (units - units.round()).abs() <= 1e-6
    };
    match action {
        Action::Bids(row) => {
            if row.len() != g.num_items || row.iter().any(|s| s.len() != g.shares_per_item) {
                return Some("bid row dimensions do not match the instance".into());
            }
            for shares in row {
                for b in shares {
                    if *b < -TOL || !on_grid(*b) {
                        return Some(format!("bid {b} off the grid"));
                    }
                }
            }
            None
        }
        Action::Demands(row) => {
            if row.len() != g.num_items {
                return Some("demand row dimensions do not match the instance".into());
            }
            for d in row {
                if d.count as usize > g.shares_per_item {
                    return Some(format!("demand for {} shares exceeds stock", d.count));
                }
                if d.price < -TOL || !on_grid(d.price) {
                    return Some(format!("demand price {} off the grid", d.price));
                }
            }
            None
        }
    }
}

/// A profitable unilateral deviation found by the verifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub bidder: usize,
    pub action: Action,
    pub gain: f64,
}

/// Outcome of an equilibrium check.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub is_equilibrium: bool,
    pub worst_deviation: Option<Deviation>,
    pub checked_deviations: u64,
    /// Set when the deviation space was restricted (structured family or
    /// the no-overbidding filter); a positive verdict then certifies an
    /// equilibrium w.r.t. the restricted deviations only.
    pub restriction: Option<String>,
    /// Assumption audit: second-price equilibria whose bids overbid some
    /// bundle or overrun a budget are flagged here, one note per bidder.
    pub assumption_flags: Vec<String>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct DevDoc<'a> {
            bidder: usize,
            gain: f64,
            #[serde(flatten)]
            action: &'a Action,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            is_equilibrium: bool,
            worst_deviation: Option<DevDoc<'a>>,
            checked_deviations: u64,
            restriction: &'a Option<String>,
            assumption_flags: &'a [String],
        }
        let doc = Doc {
            is_equilibrium: self.is_equilibrium,
            worst_deviation: self.worst_deviation.as_ref().map(|d| DevDoc {
                bidder: d.bidder,
                gain: d.gain,
                action: &d.action,
            }),
            checked_deviations: self.checked_deviations,
            restriction: &self.restriction,
            assumption_flags: &self.assumption_flags,
        };
        serde_json::to_string_pretty(&doc).expect("verdict serializes")
    }
}

/// Knobs for deviation enumeration.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Restrict deviations (and best responses) to no-overbidding rows.
    pub no_overbid: bool,
    pub full_grid_cap: u64,
    pub outcome_cap: usize,
    pub joint_cap: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            no_overbid: false,
            full_grid_cap: FULL_GRID_ROW_CAP,
            outcome_cap: OUTCOME_CAP,
            joint_cap: JOINT_SUPPORT_CAP,
        }
    }
}

/// Shape of an enumerated strategy space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Every grid bid row within budget.
    BidGrid,
    /// Per-item constant share bids (count, price); used when the full grid
    /// is too large.
    BidStructured,
    /// Per-item (count, price) demands: the full house-clearing space.
    DemandGrid,
}

/// Enumerable deviation space of one bidder.
#[derive(Debug, Clone)]
pub struct DeviationSpace {
    pub kind: SpaceKind,
    num_items: usize,
    shares: usize,
    step: f64,
    budget_units: u64,
    /// BidGrid: per-slot unit caps (budget and, under no-overbid, value).
    slot_caps: Vec<u64>,
    /// Structured/demand: per-item price-unit caps.
    price_caps: Vec<u64>,
    /// XOS no-overbid rows additionally pass the exact subset test.
    subset_filter: Option<Valuation>,
    count: u64,
}

fn budget_units(budget: f64, step: f64) -> u64 {
    ((budget / step) + 1e-6).floor().max(0.0) as u64
}

fn clamp_add(a: u64, b: u64) -> u64 {
    const LIMIT: u64 = 1 << 60;
    (a + b).min(LIMIT)
}

impl DeviationSpace {
    /// Rows in the space (exact below the clamp of 2^60).
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn restriction(&self, no_overbid: bool) -> Option<String> {
        let mut parts = Vec::new();
        if self.kind == SpaceKind::BidStructured {
            parts.push("per-item constant share bids");
        }
        if no_overbid {
            parts.push("no-overbid/no-overbudget rows only");
        }
        if parts.is_empty() { None } else { Some(parts.join("; ")) }
    }

    /// Materializes the space; errs when it exceeds `limit`.
    pub fn collect(&self, limit: usize) -> Result<Vec<Action>> {
        if self.count > limit as u64 {
            return Err(Error::Size {
                what: "deviation space".into(),
                limit: limit as u64,
                got: self.count,
            });
        }
        let mut out = Vec::with_capacity(self.count as usize);
        self.for_each(|a| out.push(a.clone()));
        Ok(out)
    }

    /// Visits every action in lexicographic order.
    pub fn for_each<F: FnMut(&Action)>(&self, mut f: F) {
        match self.kind {
            SpaceKind::BidGrid => {
                let slots = self.num_items * self.shares;
                let mut units = vec![0u64; slots];
                self.bid_grid_dfs(0, self.budget_units, &mut units, &mut f);
            }
            SpaceKind::BidStructured | SpaceKind::DemandGrid => {
                let mut opts = vec![(0u32, 0u64); self.num_items];
                self.per_item_dfs(0, self.budget_units, &mut opts, &mut f);
            }
        }
    }

    fn bid_grid_dfs<F: FnMut(&Action)>(
        &self,
        slot: usize,
        rem: u64,
        units: &mut Vec<u64>,
        f: &mut F,
    ) {
        let slots = self.num_items * self.shares;
        if slot == slots {
            let action = self.bids_action(units);
            if let Some(val) = &self.subset_filter {
                if let Action::Bids(row) = &action {
                    if !subset_no_overbid_ok(val, row, self.shares) {
                        return;
                    }
                }
            }
            f(&action);
            return;
        }
        let cap = self.slot_caps[slot].min(rem);
        for u in 0..=cap {
            units[slot] = u;
            self.bid_grid_dfs(slot + 1, rem - u, units, f);
        }
        units[slot] = 0;
    }

    fn per_item_dfs<F: FnMut(&Action)>(
        &self,
        item: usize,
        rem: u64,
        opts: &mut Vec<(u32, u64)>,
        f: &mut F,
    ) {
        if item == self.num_items {
            f(&self.per_item_action(opts));
            return;
        }
        opts[item] = (0, 0);
        self.per_item_dfs(item + 1, rem, opts, f);
        for c in 1..=self.shares as u32 {
            let max_p = (rem / c as u64).min(self.price_caps[item]);
            for p in 1..=max_p {
                opts[item] = (c, p);
                self.per_item_dfs(item + 1, rem - c as u64 * p, opts, f);
            }
        }
        opts[item] = (0, 0);
    }

    fn bids_action(&self, units: &[u64]) -> Action {
        let mut row = vec![vec![0.0; self.shares]; self.num_items];
        for (s, &u) in units.iter().enumerate() {
            row[s / self.shares][s % self.shares] = u as f64 * self.step;
        }
        Action::Bids(row)
    }

    fn per_item_action(&self, opts: &[(u32, u64)]) -> Action {
        match self.kind {
            SpaceKind::DemandGrid => Action::Demands(
                opts.iter()
                    .map(|&(c, p)| {
                        if c == 0 {
                            Demand::none()
                        } else {
                            Demand { count: c, price: p as f64 * self.step }
                        }
                    })
                    .collect(),
            ),
            _ => {
                let mut row = vec![vec![0.0; self.shares]; self.num_items];
                for (j, &(c, p)) in opts.iter().enumerate() {
                    for l in 0..c as usize {
                        row[j][l] = p as f64 * self.step;
                    }
                }
                Action::Bids(row)
            }
        }
    }
}

fn subset_no_overbid_ok(val: &Valuation, row: &[Vec<f64>], h: usize) -> bool {
    // only installed for small instances; mirrors mechanisms::check_no_overbidding
    let m = row.len();
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(m);
    for shares in row {
        let mut sorted = shares.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite bids"));
        let mut acc = vec![0.0];
        for b in sorted {
            acc.push(acc.last().unwrap() + b);
        }
        prefix.push(acc);
    }
    let mut counts = vec![0u32; m];
    loop {
        let bundle = ShareBundle { counts: counts.clone() };
        let bid_sum: f64 = counts.iter().enumerate().map(|(j, &c)| prefix[j][c as usize]).sum();
        if bid_sum > val.value(&bundle, h).expect("dims") + TOL {
            return false;
        }
        let mut j = 0;
        loop {
            if j == m {
                return true;
            }
            counts[j] += 1;
            if counts[j] as usize <= h {
                break;
            }
            counts[j] = 0;
            j += 1;
        }
    }
}

/// Builds the deviation space of one bidder: all grid rows within budget
/// (over-budget rows are excluded; their utility can only be -inf or
/// dominated). When the full bid grid would exceed `opts.full_grid_cap`, the
/// space degrades to per-item constant share bids and the restriction is
/// reported on the verdict.
pub fn deviation_space(
    g: &GameInstance,
    bidder: usize,
    mech: Mechanism,
    opts: &SearchOptions,
) -> Result<DeviationSpace> {
    deviation_space_for(
        g,
        &g.bidders[bidder].valuation,
        g.bidders[bidder].budget,
        mech,
        opts,
    )
}

/// As [`deviation_space`], with an explicit valuation and budget (used for
/// Bayesian types).
pub fn deviation_space_for(
    g: &GameInstance,
    valuation: &Valuation,
    budget: f64,
    mech: Mechanism,
    opts: &SearchOptions,
) -> Result<DeviationSpace> {
    let m = g.num_items;
    let h = g.shares_per_item;
    let step = g.bid_grid_step;
    let budget_u = budget_units(budget, step);

    if mech.uses_demands() {
        let price_caps = vec![budget_u; m];
        let count = count_per_item(m, h, budget_u, &price_caps);
        if count > SCAN_ROW_CAP {
            return Err(Error::Size {
                what: "demand deviation space".into(),
                limit: SCAN_ROW_CAP,
                got: count,
            });
        }
        return Ok(DeviationSpace {
            kind: SpaceKind::DemandGrid,
            num_items: m,
            shares: h,
            step,
            budget_units: budget_u,
            slot_caps: Vec::new(),
            price_caps,
            subset_filter: None,
            count,
        });
    }

    // per-slot caps from the budget and, optionally, no-overbidding
    let mut slot_caps = vec![budget_u; m * h];
    if opts.no_overbid {
        for j in 0..m {
            let cap_value = valuation.item_value(j) / h as f64;
            let cap_units = budget_units(cap_value, step);
            for l in 0..h {
                slot_caps[j * h + l] = slot_caps[j * h + l].min(cap_units);
            }
        }
    }
    let subset_filter = match (opts.no_overbid, valuation) {
        (true, Valuation::Xos { .. }) if m * h <= crate::mechanisms::EXACT_SUBSET_SHARES => {
            Some(valuation.clone())
        }
        _ => None,
    };
    let full_count = count_bid_grid(&slot_caps, budget_u);
    if full_count <= opts.full_grid_cap {
        return Ok(DeviationSpace {
            kind: SpaceKind::BidGrid,
            num_items: m,
            shares: h,
            step,
            budget_units: budget_u,
            slot_caps,
            price_caps: Vec::new(),
            subset_filter,
            count: full_count,
        });
    }
    // structured fallback: per-item (count, price)
    let price_caps: Vec<u64> = (0..m)
        .map(|j| if opts.no_overbid { slot_caps[j * h] } else { budget_u })
        .collect();
    let count = count_per_item(m, h, budget_u, &price_caps);
    if count > SCAN_ROW_CAP {
        return Err(Error::Size {
            what: "structured deviation space".into(),
            limit: SCAN_ROW_CAP,
            got: count,
        });
    }
    Ok(DeviationSpace {
        kind: SpaceKind::BidStructured,
        num_items: m,
        shares: h,
        step,
        budget_units: budget_u,
        slot_caps,
        price_caps,
        subset_filter,
        count,
    })
}

fn count_bid_grid(slot_caps: &[u64], budget: u64) -> u64 {
    let b = budget as usize;
    let mut ways = vec![0u64; b + 1];
    ways[0] = 1;
    for &cap in slot_caps {
        let mut next = vec![0u64; b + 1];
        for r in 0..=b {
            if ways[r] == 0 {
                continue;
            }
            let top = (cap as usize).min(b - r);
            for u in 0..=top {
                next[r + u] = clamp_add(next[r + u], ways[r]);
            }
        }
        ways = next;
    }
    ways.iter().fold(0u64, |acc, &w| clamp_add(acc, w))
}

fn count_per_item(m: usize, h: usize, budget: u64, price_caps: &[u64]) -> u64 {
    let b = budget as usize;
    let mut ways = vec![0u64; b + 1];
    ways[0] = 1;
    for j in 0..m {
        // options per cost for this item
        let mut per_cost = vec![0u64; b + 1];
        per_cost[0] = 1;
        for c in 1..=h as u64 {
            let max_p = (b as u64 / c).min(price_caps[j]);
            for p in 1..=max_p {
                let cost = (c * p) as usize;
                if cost <= b {
                    per_cost[cost] = clamp_add(per_cost[cost], 1);
                }
            }
        }
        let mut next = vec![0u64; b + 1];
        for r in 0..=b {
            if ways[r] == 0 {
                continue;
            }
            for (cost, &k) in per_cost.iter().enumerate() {
                if k == 0 || r + cost > b {
                    continue;
                }
                next[r + cost] = clamp_add(next[r + cost], ways[r].saturating_mul(k).min(1 << 60));
            }
        }
        ways = next;
    }
    ways.iter().fold(0u64, |acc, &w| clamp_add(acc, w))
}

// ---------------------------------------------------------------------------
// joint-support enumeration
// ---------------------------------------------------------------------------

/// Per-bidder supports for joint enumeration: `(action, prob)` lists.
type Supports<'a> = Vec<Vec<(&'a Action, f64)>>;

fn supports_of<'a>(profile: &'a MixedProfile) -> Supports<'a> {
    profile
        .strategies
        .iter()
        .map(|row| {
            row.support
                .iter()
                .filter(|(_, p)| *p > TOL)
                .map(|(a, p)| (a, *p))
                .collect()
        })
        .collect()
}

fn joint_size(supports: &Supports<'_>, skip: Option<usize>) -> u64 {
    supports
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, s)| s.len() as u64)
        .fold(1u64, |acc, k| acc.saturating_mul(k.max(1)))
}

/// Visits every combination of support points (optionally holding one bidder
/// out) with the product probability.
fn for_each_joint<'a, F: FnMut(&[&'a Action], f64)>(
    supports: &Supports<'a>,
    skip: Option<usize>,
    mut f: F,
) {
    let n = supports.len();
    let mut actions: Vec<&'a Action> = Vec::with_capacity(n);
    for row in supports.iter() {
        // placeholder; every slot is overwritten before use except `skip`,
        // which callers must overwrite themselves
        actions.push(row.first().map(|(a, _)| *a).expect("nonempty support"));
    }
    fn go<'a, F: FnMut(&[&'a Action], f64)>(
        supports: &Supports<'a>,
        skip: Option<usize>,
        i: usize,
        prob: f64,
        actions: &mut Vec<&'a Action>,
        f: &mut F,
    ) {
        if i == supports.len() {
            f(actions, prob);
            return;
        }
        if Some(i) == skip {
            go(supports, skip, i + 1, prob, actions, f);
            return;
        }
        for (a, p) in &supports[i] {
            actions[i] = a;
            go(supports, skip, i + 1, prob * p, actions, f);
        }
    }
    go(supports, skip, 0, 1.0, &mut actions, &mut f);
}

fn add_utility(acc: &mut f64, u: f64, p: f64) {
    if u == f64::NEG_INFINITY {
        *acc = f64::NEG_INFINITY;
    } else if *acc != f64::NEG_INFINITY {
        *acc += p * u;
    }
}

/// Exact expected utility of every bidder under the mixed profile.
fn expected_utilities(
    g: &GameInstance,
    mech: Mechanism,
    supports: &Supports<'_>,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Vec<f64>> {
    let n = g.num_bidders();
    let size = joint_size(supports, None);
    if size > opts.joint_cap {
        return Err(Error::Size { what: "joint support".into(), limit: opts.joint_cap, got: size });
    }
    let mut utils = vec![0.0; n];
    let mut err = None;
    for_each_joint(supports, None, |actions, prob| {
        if err.is_some() || prob <= 0.0 {
            return;
        }
        match outcome_distribution_refs(g, mech, actions, t, opts.outcome_cap) {
            Ok(dist) => {
                for (o, q) in &dist {
                    for i in 0..n {
                        let u = crate::mechanisms::utility(g, i, o);
                        add_utility(&mut utils[i], u, prob * q);
                    }
                }
            }
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(utils),
    }
}

// ---------------------------------------------------------------------------
// fast expected-utility tables for a single deviating bidder
// ---------------------------------------------------------------------------

/// Distribution of the toughest competition a deviator faces on one share:
/// (max competing bid in grid units, best tie rank among the tied, tied
/// count, probability).
#[derive(Debug, Clone)]
struct ShareCompetition {
    entries: Vec<(i64, usize, u32, f64)>,
}

fn to_units(x: f64, step: f64) -> i64 {
    (x / step).round() as i64
}

fn share_competition(
    g: &GameInstance,
    supports: &Supports<'_>,
    bidder: usize,
    ranks: &[usize],
    step: f64,
) -> Vec<ShareCompetition> {
    let m = g.num_items;
    let h = g.shares_per_item;
    let mut maps: Vec<HashMap<(i64, usize, u32), f64>> = vec![HashMap::new(); m * h];
    for_each_joint(supports, Some(bidder), |actions, prob| {
        if prob <= 0.0 {
            return;
        }
        for j in 0..m {
            for l in 0..h {
                let mut best = 0.0f64;
                for (k, a) in actions.iter().enumerate() {
                    if k == bidder {
                        continue;
                    }
                    if let Action::Bids(row) = a {
                        best = best.max(row[j][l]);
                    }
                }
                let (units, min_rank, count) = if best <= TOL {
                    (0i64, usize::MAX, 0u32)
                } else {
                    let mut min_rank = usize::MAX;
                    let mut count = 0u32;
                    for (k, a) in actions.iter().enumerate() {
                        if k == bidder {
                            continue;
                        }
                        if let Action::Bids(row) = a {
                            if (row[j][l] - best).abs() <= TOL {
                                count += 1;
                                min_rank = min_rank.min(ranks[k]);
                            }
                        }
                    }
                    (to_units(best, step), min_rank, count)
                };
                *maps[j * h + l].entry((units, min_rank, count)).or_insert(0.0) += prob;
            }
        }
    });
    maps.into_iter()
        .map(|m| ShareCompetition {
            entries: m.into_iter().map(|((u, r, c), p)| (u, r, c, p)).collect(),
        })
        .collect()
}

/// Per-slot expected utility contribution of bidding `u` grid units, for an
/// additive deviator. Valid because deviations never exceed the budget, so
/// the utility is linear across shares.
fn bid_contrib_tables(
    comp: &[ShareCompetition],
    slot_values: &[f64],
    slot_caps: &[u64],
    step: f64,
    second: bool,
    my_rank: usize,
    uniform: bool,
) -> Vec<Vec<f64>> {
    comp.iter()
        .enumerate()
        .map(|(s, sc)| {
            let v = slot_values[s];
            (0..=slot_caps[s])
                .map(|u| {
                    if u == 0 {
                        return 0.0;
                    }
                    let bid = u as f64 * step;
                    let mut total = 0.0;
                    for &(m_units, min_rank, count, prob) in &sc.entries {
                        let (win, pay) = if (u as i64) > m_units {
                            (1.0, if second { m_units as f64 * step } else { bid })
                        } else if (u as i64) == m_units {
                            let w = if uniform {
                                1.0 / (count as f64 + 1.0)
                            } else if my_rank < min_rank {
                                1.0
                            } else {
                                0.0
                            };
                            (w, bid)
                        } else {
                            (0.0, 0.0)
                        };
                        total += prob * win * (v - pay);
                    }
                    total
                })
                .collect()
        })
        .collect()
}

/// Canonical list of live competing demands on one item: (bidder, count,
/// price units), sorted by bidder.
type ItemDemands = Vec<(usize, u32, i64)>;

fn house_marginals(
    g: &GameInstance,
    supports: &Supports<'_>,
    bidder: usize,
    step: f64,
) -> Vec<Vec<(ItemDemands, f64)>> {
    let m = g.num_items;
    let mut maps: Vec<HashMap<ItemDemands, f64>> = vec![HashMap::new(); m];
    for_each_joint(supports, Some(bidder), |actions, prob| {
        if prob <= 0.0 {
            return;
        }
        for j in 0..m {
            let mut key: ItemDemands = Vec::new();
            for (k, a) in actions.iter().enumerate() {
                if k == bidder {
                    continue;
                }
                if let Action::Demands(row) = a {
                    if row[j].is_live() {
                        key.push((k, row[j].count, to_units(row[j].price, step)));
                    }
                }
            }
            *maps[j].entry(key).or_insert(0.0) += prob;
        }
    });
    maps.into_iter()
        .map(|m| {
            let mut v: Vec<(ItemDemands, f64)> = m.into_iter().collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        })
        .collect()
}

/// Expected shares a deviator wins demanding `count` at `price_units`,
/// against fixed competing demands, under the tie rule. Higher-price groups
/// drain stock order-independently; only the deviator's own tie group needs
/// order enumeration.
fn house_expected_shares(
    others: &ItemDemands,
    count: u32,
    price_units: i64,
    h: u32,
    ranks: &[usize],
    my_rank: usize,
    uniform: bool,
) -> f64 {
    let mut rem = h;
    for &(_, c, p) in others {
        if p > price_units {
            rem = rem.saturating_sub(c);
        }
    }
    if rem == 0 {
        return 0.0;
    }
    let group: Vec<(usize, u32)> = others
        .iter()
        .filter(|&&(_, _, p)| p == price_units)
        .map(|&(k, c, _)| (k, c))
        .collect();
    if group.is_empty() {
        return count.min(rem) as f64;
    }
    if !uniform {
        let mut before = 0u32;
        for &(k, c) in &group {
            if ranks[k] < my_rank {
                before += c;
            }
        }
        return count.min(rem.saturating_sub(before)) as f64;
    }
    // uniform order among the group plus the deviator
    let k = group.len();
    let mut idx: Vec<usize> = (0..=k).collect(); // position k = deviator
    let mut total = 0.0;
    let mut perms = 0u64;
    fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, at: usize, f: &mut F) {
        if at == items.len() {
            f(items);
            return;
        }
        for i in at..items.len() {
            items.swap(at, i);
            permute(items, at + 1, f);
            items.swap(at, i);
        }
    }
    permute(&mut idx, 0, &mut |order| {
        let mut r = rem;
        let mut got = 0u32;
        for &o in order {
            if r == 0 {
                break;
            }
            if o == k {
                got = count.min(r);
                break;
            }
            r = r.saturating_sub(group[o].1);
        }
        total += got as f64;
        perms += 1;
    });
    total / perms as f64
}

/// Per-item expected utility contributions for every (count, price) demand
/// option of an additive deviator.
fn demand_contrib_tables(
    marginals: &[Vec<(ItemDemands, f64)>],
    item_values: &[f64],
    h: usize,
    step: f64,
    budget_u: u64,
    price_caps: &[u64],
    ranks: &[usize],
    my_rank: usize,
    uniform: bool,
) -> Vec<HashMap<(u32, u64), f64>> {
    marginals
        .iter()
        .enumerate()
        .map(|(j, outcomes)| {
            let v_share = item_values[j] / h as f64;
            let mut table = HashMap::new();
            for c in 1..=h as u32 {
                let max_p = (budget_u / c as u64).min(price_caps[j]);
                for p in 1..=max_p {
                    let price = p as f64 * step;
                    let mut contrib = 0.0;
                    for (others, prob) in outcomes {
                        let got = house_expected_shares(
                            others,
                            c,
                            p as i64,
                            h as u32,
                            ranks,
                            my_rank,
                            uniform,
                        );
                        contrib += prob * got * (v_share - price);
                    }
                    table.insert((c, p), contrib);
                }
            }
            table
        })
        .collect()
}

// ---------------------------------------------------------------------------
// best-response scans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ScanResult {
    best_utility: f64,
    best_action: Option<Action>,
    rows: u64,
}

/// Best response over the full bid grid using per-slot contribution tables.
/// Splits on the first slot for parallelism; the merge keeps the
/// lexicographically-first maximizer.
fn scan_bid_grid_fast(space: &DeviationSpace, contrib: &[Vec<f64>]) -> ScanResult {
    let slots = space.num_items * space.shares;
    if slots == 0 {
        return ScanResult { best_utility: 0.0, best_action: None, rows: 0 };
    }
    let first_cap = space.slot_caps[0].min(space.budget_units);
    let branches: Vec<ScanResult> = (0..=first_cap)
        .into_par_iter()
        .map(|u0| {
            let mut units = vec![0u64; slots];
            units[0] = u0;
            let mut best = f64::NEG_INFINITY;
            let mut best_units: Option<Vec<u64>> = None;
            let mut rows = 0u64;
            fn go(
                space: &DeviationSpace,
                contrib: &[Vec<f64>],
                slot: usize,
                rem: u64,
                util: f64,
                units: &mut Vec<u64>,
                best: &mut f64,
                best_units: &mut Option<Vec<u64>>,
                rows: &mut u64,
            ) {
                let slots = space.slot_caps.len();
                if slot == slots {
                    *rows += 1;
                    if util > *best + TOL {
                        *best = util;
                        *best_units = Some(units.clone());
                    }
                    return;
                }
                let cap = space.slot_caps[slot].min(rem);
                for u in 0..=cap {
                    units[slot] = u;
                    go(
                        space,
                        contrib,
                        slot + 1,
                        rem - u,
                        util + contrib[slot][u as usize],
                        units,
                        best,
                        best_units,
                        rows,
                    );
                }
                units[slot] = 0;
            }
            go(
                space,
                contrib,
                1,
                space.budget_units - u0,
                contrib[0][u0 as usize],
                &mut units,
                &mut best,
                &mut best_units,
                &mut rows,
            );
            ScanResult {
                best_utility: best,
                best_action: best_units.map(|u| space.bids_action(&u)),
                rows,
            }
        })
        .collect();
    merge_branches(branches)
}

/// Best response over per-item (count, price) options with additive
/// contribution tables; covers both the structured bid family and house
/// demands.
fn scan_per_item_fast(
    space: &DeviationSpace,
    tables: &[HashMap<(u32, u64), f64>],
) -> ScanResult {
    let m = space.num_items;
    // first-item options in lexicographic order
    let mut first_opts: Vec<(u32, u64)> = vec![(0, 0)];
    for c in 1..=space.shares as u32 {
        let max_p = (space.budget_units / c as u64).min(space.price_caps[0]);
        for p in 1..=max_p {
            first_opts.push((c, p));
        }
    }
    let branches: Vec<ScanResult> = first_opts
        .into_par_iter()
        .map(|(c0, p0)| {
            let cost0 = c0 as u64 * p0;
            let util0 = if c0 == 0 { 0.0 } else { tables[0][&(c0, p0)] };
            let mut opts = vec![(0u32, 0u64); m];
            opts[0] = (c0, p0);
            let mut best = f64::NEG_INFINITY;
            let mut best_opts: Option<Vec<(u32, u64)>> = None;
            let mut rows = 0u64;
            fn go(
                space: &DeviationSpace,
                tables: &[HashMap<(u32, u64), f64>],
                item: usize,
                rem: u64,
                util: f64,
                opts: &mut Vec<(u32, u64)>,
                best: &mut f64,
                best_opts: &mut Option<Vec<(u32, u64)>>,
                rows: &mut u64,
            ) {
                if item == space.num_items {
                    *rows += 1;
                    if util > *best + TOL {
                        *best = util;
                        *best_opts = Some(opts.clone());
                    }
                    return;
                }
                opts[item] = (0, 0);
                go(space, tables, item + 1, rem, util, opts, best, best_opts, rows);
                for c in 1..=space.shares as u32 {
                    let max_p = (rem / c as u64).min(space.price_caps[item]);
                    for p in 1..=max_p {
                        opts[item] = (c, p);
                        go(
                            space,
                            tables,
                            item + 1,
                            rem - c as u64 * p,
                            util + tables[item][&(c, p)],
                            opts,
                            best,
                            best_opts,
                            rows,
                        );
                    }
                }
                opts[item] = (0, 0);
            }
            go(
                space,
                tables,
                1,
                space.budget_units - cost0,
                util0,
                &mut opts,
                &mut best,
                &mut best_opts,
                &mut rows,
            );
            ScanResult {
                best_utility: best,
                best_action: best_opts.map(|o| space.per_item_action(&o)),
                rows,
            }
        })
        .collect();
    merge_branches(branches)
}

fn merge_branches(branches: Vec<ScanResult>) -> ScanResult {
    let mut merged = ScanResult { best_utility: f64::NEG_INFINITY, best_action: None, rows: 0 };
    for b in branches {
        merged.rows += b.rows;
        if b.best_action.is_some() && b.best_utility > merged.best_utility + TOL {
            merged.best_utility = b.best_utility;
            merged.best_action = b.best_action;
        }
    }
    merged
}

/// Fallback: evaluates every row through the full mechanism (exact tie
/// expansion); needed for XOS deviators where utility is not share-separable.
fn scan_generic(
    g: &GameInstance,
    mech: Mechanism,
    t: &TieBreakRule,
    space: &DeviationSpace,
    supports: &Supports<'_>,
    bidder: usize,
    valuation: &Valuation,
    budget: f64,
    opts: &SearchOptions,
) -> Result<ScanResult> {
    let mut best = f64::NEG_INFINITY;
    let mut best_action: Option<Action> = None;
    let mut rows = 0u64;
    let mut err: Option<Error> = None;
    space.for_each(|action| {
        if err.is_some() {
            return;
        }
        rows += 1;
        let mut util = 0.0;
        for_each_joint(supports, Some(bidder), |actions, prob| {
            if err.is_some() || prob <= 0.0 {
                return;
            }
            let mut scratch: Vec<&Action> = actions.to_vec();
            scratch[bidder] = action;
            match outcome_distribution_refs(g, mech, &scratch, t, opts.outcome_cap) {
                Ok(dist) => {
                    for (o, q) in &dist {
                        let u = crate::mechanisms::bidder_utility(
                            valuation,
                            budget,
                            &o.bundles[bidder],
                            o.payments[bidder],
                            g.shares_per_item,
                        );
                        add_utility(&mut util, u, prob * q);
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if util > best + TOL {
            best = util;
            best_action = Some(action.clone());
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(ScanResult { best_utility: best, best_action, rows }),
    }
}

/// Best response of one bidder against the others' mixed strategies.
fn best_response(
    g: &GameInstance,
    mech: Mechanism,
    t: &TieBreakRule,
    supports: &Supports<'_>,
    bidder: usize,
    valuation: &Valuation,
    budget: f64,
    opts: &SearchOptions,
) -> Result<(ScanResult, DeviationSpace)> {
    let space = deviation_space_for(g, valuation, budget, mech, opts)?;
    let others = joint_size(supports, Some(bidder));
    if others > opts.joint_cap {
        return Err(Error::Size {
            what: "joint support".into(),
            limit: opts.joint_cap,
            got: others,
        });
    }
    let ranks = t.ranks(g.num_bidders())?;
    let uniform = matches!(t, TieBreakRule::UniformRandom { .. });
    let step = g.bid_grid_step;
    let additive_values: Option<Vec<f64>> = match valuation {
        Valuation::Additive { values } => Some(values.clone()),
        _ => None,
    };
    let result = match (&space.kind, &additive_values) {
        (SpaceKind::DemandGrid, Some(values)) => {
            let marginals = house_marginals(g, supports, bidder, step);
            let tables = demand_contrib_tables(
                &marginals,
                values,
                g.shares_per_item,
                step,
                space.budget_units,
                &space.price_caps,
                &ranks,
                ranks[bidder],
                uniform,
            );
            scan_per_item_fast(&space, &tables)
        }
        (SpaceKind::BidGrid, Some(values)) | (SpaceKind::BidStructured, Some(values)) => {
            let comp = share_competition(g, supports, bidder, &ranks, step);
            let h = g.shares_per_item;
            let slot_values: Vec<f64> =
                (0..g.num_items * h).map(|s| values[s / h] / h as f64).collect();
            let contrib = bid_contrib_tables(
                &comp,
                &slot_values,
                &space.slot_caps,
                step,
                mech == Mechanism::Second,
                ranks[bidder],
                uniform,
            );
            if space.kind == SpaceKind::BidGrid {
                scan_bid_grid_fast(&space, &contrib)
            } else {
                // structured rows bid `p` on the first `c` shares of an item
                let tables: Vec<HashMap<(u32, u64), f64>> = (0..g.num_items)
                    .map(|j| {
                        let mut table = HashMap::new();
                        for c in 1..=h as u32 {
                            let max_p =
                                (space.budget_units / c as u64).min(space.price_caps[j]);
                            for p in 1..=max_p {
                                let mut total = 0.0;
                                for l in 0..c as usize {
                                    let slot = j * h + l;
                                    if p <= space.slot_caps[slot] {
                                        total += contrib[slot][p as usize];
                                    } else {
                                        total = f64::NEG_INFINITY;
                                    }
                                }
                                if total > f64::NEG_INFINITY {
                                    table.insert((c, p), total);
                                }
                            }
                        }
                        table
                    })
                    .collect();
                scan_per_item_restricted(&space, &tables)
            }
        }
        _ => scan_generic(g, mech, t, &space, supports, bidder, valuation, budget, opts)?,
    };
    Ok((result, space))
}

/// Like [`scan_per_item_fast`] but skips options missing from the tables
/// (pruned by per-slot caps under no-overbid).
fn scan_per_item_restricted(
    space: &DeviationSpace,
    tables: &[HashMap<(u32, u64), f64>],
) -> ScanResult {
    let m = space.num_items;
    let mut best = f64::NEG_INFINITY;
    let mut best_opts: Option<Vec<(u32, u64)>> = None;
    let mut rows = 0u64;
    let mut opts = vec![(0u32, 0u64); m];
    fn go(
        space: &DeviationSpace,
        tables: &[HashMap<(u32, u64), f64>],
        item: usize,
        rem: u64,
        util: f64,
        opts: &mut Vec<(u32, u64)>,
        best: &mut f64,
        best_opts: &mut Option<Vec<(u32, u64)>>,
        rows: &mut u64,
    ) {
        if item == space.num_items {
            *rows += 1;
            if util > *best + TOL {
                *best = util;
                *best_opts = Some(opts.clone());
            }
            return;
        }
        opts[item] = (0, 0);
        go(space, tables, item + 1, rem, util, opts, best, best_opts, rows);
        for c in 1..=space.shares as u32 {
            let max_p = (rem / c as u64).min(space.price_caps[item]);
            for p in 1..=max_p {
                if let Some(&u) = tables[item].get(&(c, p)) {
                    opts[item] = (c, p);
                    go(space, tables, item + 1, rem - c as u64 * p, util + u, opts, best, best_opts, rows);
                }
            }
        }
        opts[item] = (0, 0);
    }
    go(space, tables, 0, space.budget_units, 0.0, &mut opts, &mut best, &mut best_opts, &mut rows);
    ScanResult { best_utility: best, best_action: best_opts.map(|o| space.per_item_action(&o)), rows }
}

// ---------------------------------------------------------------------------
// public verification entry points
// ---------------------------------------------------------------------------

/// Verifies a pure bid profile as a Nash equilibrium of `mech`.
pub fn verify_pure_ne(
    g: &GameInstance,
    mech: Mechanism,
    b: &BidProfile,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Verdict> {
    verify_mixed_ne(g, mech, &MixedProfile::from_bid_profile(b), t, opts)
}

/// Verifies a pure action profile (bids or demands).
pub fn verify_pure_actions(
    g: &GameInstance,
    mech: Mechanism,
    actions: Vec<Action>,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Verdict> {
    verify_mixed_ne(g, mech, &MixedProfile::pure(actions), t, opts)
}

/// Verifies a mixed profile by exact joint-support enumeration against every
/// pure grid deviation.
pub fn verify_mixed_ne(
    g: &GameInstance,
    mech: Mechanism,
    s: &MixedProfile,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Verdict> {
    let problems = s.validate(g);
    if !problems.is_empty() {
        return Err(Error::Input(problems.join("; ")));
    }
    let supports = supports_of(s);
    let current = expected_utilities(g, mech, &supports, t, opts)?;
    let per_bidder: Vec<Result<(ScanResult, DeviationSpace)>> = (0..g.num_bidders())
        .into_par_iter()
        .map(|i| {
            best_response(
                g,
                mech,
                t,
                &supports,
                i,
                &g.bidders[i].valuation,
                g.bidders[i].budget,
                opts,
            )
        })
        .collect();
    let mut worst: Option<Deviation> = None;
    let mut checked = 0u64;
    let mut restrictions: Vec<String> = Vec::new();
    for (i, entry) in per_bidder.into_iter().enumerate() {
        let (scan, space) = entry?;
        checked += scan.rows;
        if let Some(label) = space.restriction(opts.no_overbid) {
            if !restrictions.contains(&label) {
                restrictions.push(label);
            }
        }
        if let Some(action) = scan.best_action {
            let gain = if current[i] == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                scan.best_utility - current[i]
            };
            if gain > TOL && worst.as_ref().is_none_or(|w| gain > w.gain + TOL) {
                worst = Some(Deviation { bidder: i, action, gain });
            }
        }
    }
    let is_equilibrium = worst.is_none();
    let mut assumption_flags = Vec::new();
    if mech == Mechanism::Second && is_equilibrium {
        for (i, row) in s.strategies.iter().enumerate() {
            for (action, p) in &row.support {
                if *p <= TOL {
                    continue;
                }
                if let Action::Bids(bids) = action {
                    if !crate::mechanisms::check_no_overbidding(g, i, bids) {
                        assumption_flags.push(format!("bidder {i} overbids at equilibrium"));
                    }
                    if !crate::mechanisms::check_no_overbudget(g, i, bids) {
                        assumption_flags.push(format!("bidder {i} bids past the budget at equilibrium"));
                    }
                }
            }
        }
    }
    Ok(Verdict {
        is_equilibrium,
        worst_deviation: worst,
        checked_deviations: checked,
        restriction: if restrictions.is_empty() { None } else { Some(restrictions.join("; ")) },
        assumption_flags,
    })
}

/// Result of best-response dynamics.
#[derive(Debug, Clone)]
pub struct BrdResult {
    pub converged: bool,
    pub profile: Vec<Action>,
    pub rounds: u32,
    /// The first profile seen twice, when the dynamics cycle.
    pub cycle_witness: Option<Vec<Action>>,
}

fn quantize_profile(actions: &[Action], step: f64) -> Vec<Vec<(u32, i64)>> {
    actions
        .iter()
        .map(|a| match a {
            Action::Bids(row) => row
                .iter()
                .flat_map(|shares| shares.iter().map(|b| (1u32, to_units(*b, step))))
                .collect(),
            Action::Demands(row) => {
                row.iter().map(|d| (d.count, to_units(d.price, step))).collect()
            }
        })
        .collect()
}

/// Round-robin exact best-response dynamics from `initial`. Converges when a
/// full round changes nothing (the profile is then a pure equilibrium w.r.t.
/// the searched deviation space); a revisited profile is reported as a cycle.
pub fn best_response_dynamics(
    g: &GameInstance,
    mech: Mechanism,
    t: &TieBreakRule,
    initial: Vec<Action>,
    max_rounds: u32,
    opts: &SearchOptions,
) -> Result<BrdResult> {
    let n = g.num_bidders();
    let mut profile = initial;
    let mut seen: HashMap<u64, Vec<Vec<(u32, i64)>>> = HashMap::new();
    let key0 = quantize_profile(&profile, g.bid_grid_step);
    let mut hasher = DefaultHasher::new();
    key0.hash(&mut hasher);
    seen.insert(hasher.finish(), key0);

    for round in 1..=max_rounds {
        let mut changed = false;
        for i in 0..n {
            let mixed = MixedProfile::pure(profile.clone());
            let supports = supports_of(&mixed);
            let current = expected_utilities(g, mech, &supports, t, opts)?[i];
            let (scan, _) = best_response(
                g,
                mech,
                t,
                &supports,
                i,
                &g.bidders[i].valuation,
                g.bidders[i].budget,
                opts,
            )?;
            if let Some(action) = scan.best_action {
                if current == f64::NEG_INFINITY || scan.best_utility > current + TOL {
                    profile[i] = action;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(BrdResult { converged: true, profile, rounds: round, cycle_witness: None });
        }
        let key = quantize_profile(&profile, g.bid_grid_step);
        let mut hasher = DefaultHasher::new();
        key.hash(&mut hasher);
        let digest = hasher.finish();
        if let Some(prev) = seen.get(&digest) {
            if *prev == key {
                return Ok(BrdResult {
                    converged: false,
                    profile: profile.clone(),
                    rounds: round,
                    cycle_witness: Some(profile),
                });
            }
        }
        seen.insert(digest, key);
    }
    Ok(BrdResult { converged: false, profile, rounds: max_rounds, cycle_witness: None })
}

// ---------------------------------------------------------------------------
// equilibrium statistics
// ---------------------------------------------------------------------------

/// Exact equilibrium statistics: per-item expected prices (scaled by alpha),
/// expected share fractions, budget-reach probabilities, expected revenue and
/// liquid welfare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumStats {
    /// `p_bar[j] = alpha * sum_l E[price of share l of item j]`.
    pub p_bar: Vec<f64>,
    /// `q[i][j]`: expected fraction of item j's shares won by bidder i.
    pub q: Vec<Vec<f64>>,
    /// `Q[i]`: probability that bidder i's realized value reaches the budget.
    pub budget_hit_prob: Vec<f64>,
    pub exp_revenue: f64,
    pub exp_lw: f64,
    pub alpha: f64,
}

pub fn equilibrium_stats(
    g: &GameInstance,
    mech: Mechanism,
    s: &MixedProfile,
    t: &TieBreakRule,
    alpha: f64,
    opts: &SearchOptions,
) -> Result<EquilibriumStats> {
    let problems = s.validate(g);
    if !problems.is_empty() {
        return Err(Error::Input(problems.join("; ")));
    }
    let supports = supports_of(s);
    let size = joint_size(&supports, None);
    if size > opts.joint_cap {
        return Err(Error::Size { what: "joint support".into(), limit: opts.joint_cap, got: size });
    }
    let n = g.num_bidders();
    let m = g.num_items;
    let h = g.shares_per_item;
    let mut price_sum = vec![0.0; m];
    let mut q = vec![vec![0.0; m]; n];
    let mut q_hit = vec![0.0; n];
    let mut exp_revenue = 0.0;
    let mut exp_lw = 0.0;
    let mut err = None;
    for_each_joint(&supports, None, |actions, prob| {
        if err.is_some() || prob <= 0.0 {
            return;
        }
        match outcome_distribution_refs(g, mech, actions, t, opts.outcome_cap) {
            Ok(dist) => {
                for (o, p2) in &dist {
                    let w = prob * p2;
                    for j in 0..m {
                        price_sum[j] += w * o.prices[j].iter().sum::<f64>();
                    }
                    for i in 0..n {
                        let value = g.bidders[i]
                            .valuation
                            .value(&o.bundles[i], h)
                            .expect("outcome matches instance");
                        for j in 0..m {
                            q[i][j] += w * o.bundles[i].counts[j] as f64 / h as f64;
                        }
                        if value >= g.bidders[i].budget - TOL {
                            q_hit[i] += w;
                        }
                        exp_lw += w * value.min(g.bidders[i].budget);
                    }
                    exp_revenue += w * o.payments.iter().sum::<f64>();
                }
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(EquilibriumStats {
        p_bar: price_sum.iter().map(|s| alpha * s).collect(),
        q,
        budget_hit_prob: q_hit,
        exp_revenue,
        exp_lw,
        alpha,
    })
}

/// Exact outcome distribution of a mixed profile (joint support times tie
/// expansion), for welfare measurements.
pub fn profile_outcome_distribution(
    g: &GameInstance,
    mech: Mechanism,
    s: &MixedProfile,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Vec<(crate::mechanisms::Outcome, f64)>> {
    let supports = supports_of(s);
    let size = joint_size(&supports, None);
    if size > opts.joint_cap {
        return Err(Error::Size { what: "joint support".into(), limit: opts.joint_cap, got: size });
    }
    let mut out = Vec::new();
    let mut err = None;
    for_each_joint(&supports, None, |actions, prob| {
        if err.is_some() || prob <= 0.0 {
            return;
        }
        match outcome_distribution_refs(g, mech, actions, t, opts.outcome_cap) {
            Ok(dist) => {
                for (o, q) in dist {
                    out.push((o, prob * q));
                }
            }
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

// ---------------------------------------------------------------------------
// Bayesian verification
// ---------------------------------------------------------------------------

/// A finite-type Bayesian game: independent per-bidder type distributions,
/// each type a (valuation, budget) pair.
#[derive(Debug, Clone)]
pub struct BayesianGame {
    /// `types[i]` lists bidder i's types with probabilities summing to one.
    pub types: Vec<Vec<(crate::game::Bidder, f64)>>,
    pub num_items: usize,
    pub shares_per_item: usize,
    pub bid_grid_step: f64,
}

impl BayesianGame {
    pub fn num_bidders(&self) -> usize {
        self.types.len()
    }

    /// Instance shape for mechanism runs; bidder identities are the first
    /// type of each bidder (valuations are irrelevant to allocation).
    pub fn shape(&self) -> GameInstance {
        GameInstance::new(
            self.types.iter().map(|ts| ts[0].0.clone()).collect(),
            self.num_items,
            self.shares_per_item,
            self.bid_grid_step,
        )
    }

    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        for (i, ts) in self.types.iter().enumerate() {
            if ts.is_empty() {
                report.push(format!("bidder {i} has no types"));
                continue;
            }
            let total: f64 = ts.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-6 {
                report.push(format!("bidder {i}: type probabilities sum to {total}"));
            }
        }
        report
    }
}

/// A Bayesian strategy: one mixed row per (bidder, type).
#[derive(Debug, Clone)]
pub struct BayesStrategy {
    pub rows: Vec<Vec<MixedRow>>,
}

/// Interim Bayesian Nash verification: for every bidder and realized type,
/// the prescribed row must match or beat every budget-feasible pure
/// deviation in expectation over the other bidders' types and bids.
pub fn verify_bayesian_ne(
    bg: &BayesianGame,
    mech: Mechanism,
    strat: &BayesStrategy,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Verdict> {
    let problems = bg.validate();
    if !problems.is_empty() {
        return Err(Error::Input(problems.join("; ")));
    }
    if strat.rows.len() != bg.num_bidders()
        || strat.rows.iter().zip(&bg.types).any(|(rows, ts)| rows.len() != ts.len())
    {
        return Err(Error::Input("strategy shape does not match the type space".into()));
    }
    let shape = bg.shape();
    let n = bg.num_bidders();
    let mut worst: Option<Deviation> = None;
    let mut checked = 0u64;
    let mut restrictions: Vec<String> = Vec::new();

    for i in 0..n {
        for (k, (bidder_type, _)) in bg.types[i].iter().enumerate() {
            // Others' strategies expand type-by-type into one mixed row:
            // P(action) = sum_types P(type) * P(action | type).
            let mut strategies: Vec<MixedRow> = Vec::with_capacity(n);
            for j in 0..n {
                if j == i {
                    strategies.push(strat.rows[i][k].clone());
                } else {
                    let mut support = Vec::new();
                    for (ti, (_, tp)) in bg.types[j].iter().enumerate() {
                        for (a, p) in &strat.rows[j][ti].support {
                            support.push((a.clone(), tp * p));
                        }
                    }
                    strategies.push(MixedRow { support });
                }
            }
            let mixed = MixedProfile { strategies };
            let supports = supports_of(&mixed);
            let size = joint_size(&supports, None);
            if size > opts.joint_cap {
                return Err(Error::Size {
                    what: "type x support enumeration".into(),
                    limit: opts.joint_cap,
                    got: size,
                });
            }
            // interim utility of the prescribed row for this type
            let mut current = 0.0;
            let mut err = None;
            for_each_joint(&supports, None, |actions, prob| {
                if err.is_some() || prob <= 0.0 {
                    return;
                }
                match outcome_distribution_refs(&shape, mech, actions, t, opts.outcome_cap) {
                    Ok(dist) => {
                        for (o, q) in &dist {
                            let u = crate::mechanisms::bidder_utility(
                                &bidder_type.valuation,
                                bidder_type.budget,
                                &o.bundles[i],
                                o.payments[i],
                                shape.shares_per_item,
                            );
                            add_utility(&mut current, u, prob * q);
                        }
                    }
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            let (scan, space) = best_response(
                &shape,
                mech,
                t,
                &supports,
                i,
                &bidder_type.valuation,
                bidder_type.budget,
                opts,
            )?;
            checked += scan.rows;
            if let Some(label) = space.restriction(opts.no_overbid) {
                if !restrictions.contains(&label) {
                    restrictions.push(label);
                }
            }
            if let Some(action) = scan.best_action {
                let gain = if current == f64::NEG_INFINITY {
                    f64::INFINITY
                } else {
                    scan.best_utility - current
                };
                if gain > TOL && worst.as_ref().is_none_or(|w| gain > w.gain + TOL) {
                    worst = Some(Deviation { bidder: i, action, gain });
                }
            }
        }
    }
    let is_equilibrium = worst.is_none();
    let mut assumption_flags = Vec::new();
    if mech == Mechanism::Second && is_equilibrium {
        let shape = bg.shape();
        for (i, rows) in strat.rows.iter().enumerate() {
            for (k, row) in rows.iter().enumerate() {
                let type_bidder = &bg.types[i][k].0;
                for (action, p) in &row.support {
                    if *p <= TOL {
                        continue;
                    }
                    if let Action::Bids(bids) = action {
                        let typed = GameInstance::new(
                            (0..shape.num_bidders())
                                .map(|_| type_bidder.clone())
                                .collect(),
                            shape.num_items,
                            shape.shares_per_item,
                            shape.bid_grid_step,
                        );
                        if !crate::mechanisms::check_no_overbidding(&typed, i, bids) {
                            assumption_flags
                                .push(format!("bidder {i} type {k} overbids at equilibrium"));
                        }
                        if !crate::mechanisms::check_no_overbudget(&typed, i, bids) {
                            assumption_flags.push(format!(
                                "bidder {i} type {k} bids past the budget at equilibrium"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(Verdict {
        is_equilibrium,
        worst_deviation: worst,
        checked_deviations: checked,
        restriction: if restrictions.is_empty() { None } else { Some(restrictions.join("; ")) },
        assumption_flags,
    })
}

// ---------------------------------------------------------------------------
// exhaustive pure-equilibrium enumeration
// ---------------------------------------------------------------------------

/// Direct expected utility of one bidder in a pure profile (exact over tie
/// randomness).
fn pure_profile_utility(
    g: &GameInstance,
    mech: Mechanism,
    actions: &[&Action],
    t: &TieBreakRule,
    i: usize,
    outcome_cap: usize,
) -> Result<f64> {
    let dist = outcome_distribution_refs(g, mech, actions, t, outcome_cap)?;
    let mut util = 0.0;
    for (o, q) in &dist {
        add_utility(&mut util, crate::mechanisms::utility(g, i, o), *q);
    }
    Ok(util)
}

/// Enumerates every pure equilibrium over the budget-feasible grid profile
/// space. Exhaustive; intended for small two-bidder instances.
pub fn enumerate_pure_equilibria(
    g: &GameInstance,
    mech: Mechanism,
    t: &TieBreakRule,
    opts: &SearchOptions,
) -> Result<Vec<Vec<Action>>> {
    let n = g.num_bidders();
    let spaces: Vec<DeviationSpace> =
        (0..n).map(|i| deviation_space(g, i, mech, opts)).collect::<Result<_>>()?;
    let total: u64 = spaces.iter().map(|s| s.count()).fold(1u64, |a, b| a.saturating_mul(b));
    if n != 2 {
        if total > 1_000_000 {
            return Err(Error::Size {
                what: "pure profile enumeration".into(),
                limit: 1_000_000,
                got: total,
            });
        }
        return enumerate_generic(g, mech, t, &spaces, opts);
    }
    if total > 50_000_000 {
        return Err(Error::Size {
            what: "pure profile enumeration".into(),
            limit: 50_000_000,
            got: total,
        });
    }
    let rows0 = spaces[0].collect(usize::MAX)?;
    let rows1 = spaces[1].collect(usize::MAX)?;

    // best-response utility of bidder 0 against each row of bidder 1
    let best0: Vec<f64> = rows1
        .par_iter()
        .map(|a1| {
            let mut best = f64::NEG_INFINITY;
            for a0 in &rows0 {
                let u = pure_profile_utility(g, mech, &[a0, a1], t, 0, opts.outcome_cap)
                    .unwrap_or(f64::NEG_INFINITY);
                if u > best {
                    best = u;
                }
            }
            best
        })
        .collect();
    let best1: Vec<f64> = rows0
        .par_iter()
        .map(|a0| {
            let mut best = f64::NEG_INFINITY;
            for a1 in &rows1 {
                let u = pure_profile_utility(g, mech, &[a0, a1], t, 1, opts.outcome_cap)
                    .unwrap_or(f64::NEG_INFINITY);
                if u > best {
                    best = u;
                }
            }
            best
        })
        .collect();

    let found: Vec<Vec<Vec<Action>>> = rows0
        .par_iter()
        .enumerate()
        .map(|(i0, a0)| {
            let mut local = Vec::new();
            for (i1, a1) in rows1.iter().enumerate() {
                let u0 = pure_profile_utility(g, mech, &[a0, a1], t, 0, opts.outcome_cap)
                    .unwrap_or(f64::NEG_INFINITY);
                if u0 + TOL < best0[i1] {
                    continue;
                }
                let u1 = pure_profile_utility(g, mech, &[a0, a1], t, 1, opts.outcome_cap)
                    .unwrap_or(f64::NEG_INFINITY);
                if u1 + TOL < best1[i0] {
                    continue;
                }
                local.push(vec![a0.clone(), a1.clone()]);
            }
            local
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

fn enumerate_generic(
    g: &GameInstance,
    mech: Mechanism,
    t: &TieBreakRule,
    spaces: &[DeviationSpace],
    opts: &SearchOptions,
) -> Result<Vec<Vec<Action>>> {
    let rows: Vec<Vec<Action>> =
        spaces.iter().map(|s| s.collect(usize::MAX)).collect::<Result<_>>()?;
    let n = g.num_bidders();
    let mut found = Vec::new();
    let mut profile: Vec<usize> = vec![0; n];
    loop {
        let actions: Vec<&Action> = profile.iter().enumerate().map(|(i, &r)| &rows[i][r]).collect();
        let mut is_pne = true;
        'outer: for i in 0..n {
            let u = pure_profile_utility(g, mech, &actions, t, i, opts.outcome_cap)?;
            for alt in &rows[i] {
                let mut scratch = actions.clone();
                scratch[i] = alt;
                let ualt = pure_profile_utility(g, mech, &scratch, t, i, opts.outcome_cap)?;
                if ualt > u + TOL {
                    is_pne = false;
                    break 'outer;
                }
            }
        }
        if is_pne {
            found.push(actions.into_iter().cloned().collect());
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(found);
            }
            profile[k] += 1;
            if profile[k] < rows[k].len() {
                break;
            }
            profile[k] = 0;
            k += 1;
        }
    }
}
