//! Simultaneous share auctions: first price, second price, and the
//! house-clearing per-item market, all with pluggable tie-breaking.
//!
//! Uniform-random tie-breaking has two faces: a seeded single run
//! ([`run_first_price`] and friends) and an exact expansion of every tie
//! outcome with its probability ([`outcome_distribution`]), which is what the
//! equilibrium machinery consumes.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{approx_le, GameInstance, ShareBundle, Valuation, TOL};

/// One bidder's bids, indexed `[item][share]`.
pub type BidRow = Vec<Vec<f64>>;

/// Full bid profile, indexed `[bidder][item][share]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidProfile {
    pub bids: Vec<BidRow>,
}

/// A per-item demand in the house-clearing mechanism: how many shares at
/// which price per share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub count: u32,
    pub price: f64,
}

impl Demand {
    pub fn none() -> Self {
        Demand { count: 0, price: 0.0 }
    }

    /// A demand is live only with a positive count and price; zero-price
    /// demands are never served (zero bids win nothing).
    pub fn is_live(&self) -> bool {
        self.count > 0 && self.price > TOL
    }
}

/// One bidder's demands, indexed `[item]`.
pub type DemandRow = Vec<Demand>;

/// Full demand profile for the house-clearing mechanism, `[bidder][item]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseDemand {
    pub demands: Vec<DemandRow>,
}

/// A pure strategy for one bidder: per-share bids for the simultaneous
/// auctions, or per-item demands for the house-clearing mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "bids")]
    Bids(BidRow),
    #[serde(rename = "demands")]
    Demands(DemandRow),
}

impl Action {
    /// Worst-case spend of the action: total bids, or total demanded cost.
    pub fn cost(&self) -> f64 {
        match self {
            Action::Bids(row) => row.iter().flatten().sum(),
            Action::Demands(row) => row.iter().map(|d| d.count as f64 * d.price).sum(),
        }
    }

    pub fn zero_bids(m: usize, h: usize) -> Action {
        Action::Bids(vec![vec![0.0; h]; m])
    }

    pub fn zero_demands(m: usize) -> Action {
        Action::Demands(vec![Demand::none(); m])
    }
}

/// Which auction format resolves the submitted actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    First,
    Second,
    House,
}

impl Mechanism {
    pub fn uses_demands(&self) -> bool {
        matches!(self, Mechanism::House)
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Mechanism::First => "first",
            Mechanism::Second => "second",
            Mechanism::House => "house",
        };
        write!(f, "{name}")
    }
}

/// Tie-breaking rule. `Lexicographic` carries a preference order over bidders
/// (first entry is the most preferred); `UniformRandom` draws the winner
/// uniformly among the tied set from a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TieBreakRule {
    #[serde(rename = "lex")]
    Lexicographic { order: Vec<usize> },
    #[serde(rename = "uniform")]
    UniformRandom { seed: u64 },
}

impl TieBreakRule {
    /// Identity preference order over `n` bidders (bidder 0 most preferred).
    pub fn lexicographic(n: usize) -> Self {
        TieBreakRule::Lexicographic { order: (0..n).collect() }
    }

    pub fn uniform(seed: u64) -> Self {
        TieBreakRule::UniformRandom { seed }
    }

    /// `rank[i]` = position of bidder `i` in the preference order.
    pub fn ranks(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            TieBreakRule::Lexicographic { order } => {
                let mut rank = vec![usize::MAX; n];
                if order.len() != n {
                    return Err(Error::Input(format!(
                        "tie-break order has {} entries for {n} bidders",
                        order.len()
                    )));
                }
                for (pos, &i) in order.iter().enumerate() {
                    if i >= n || rank[i] != usize::MAX {
                        return Err(Error::Input("tie-break order is not a permutation".into()));
                    }
                    rank[i] = pos;
                }
                Ok(rank)
            }
            TieBreakRule::UniformRandom { .. } => Ok((0..n).collect()),
        }
    }
}

/// Result of one mechanism run: per-share winners, per-bidder payments and
/// won bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// `winners[item][share]`, `None` when the share went unallocated.
    pub winners: Vec<Vec<Option<usize>>>,
    pub payments: Vec<f64>,
    pub bundles: Vec<ShareBundle>,
    /// Per-share clearing price: the winning bid (first and second price) or
    /// the served price (house clearing); 0 for unallocated shares.
    pub prices: Vec<Vec<f64>>,
}

impl Outcome {
    fn from_parts(n: usize, winners: Vec<Vec<Option<usize>>>, payments: Vec<f64>, prices: Vec<Vec<f64>>) -> Self {
        let m = winners.len();
        let mut bundles = vec![ShareBundle::empty(m); n];
        for (j, row) in winners.iter().enumerate() {
            for w in row.iter().flatten() {
                bundles[*w].counts[j] += 1;
            }
        }
        Outcome { winners, payments, bundles, prices }
    }

    pub fn to_json(&self) -> String {
        let doc = OutcomeDoc {
            winners: self
                .winners
                .iter()
                .map(|row| row.iter().map(|w| w.map_or(-1, |i| i as i64)).collect())
                .collect(),
            payments: self.payments.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("outcome serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeDoc {
    winners: Vec<Vec<i64>>,
    payments: Vec<f64>,
}

fn expect_bids<'a>(actions: &[&'a Action]) -> Result<Vec<&'a BidRow>> {
    actions
        .iter()
        .map(|a| match a {
            Action::Bids(row) => Ok(row),
            Action::Demands(_) => Err(Error::Input("mechanism expects per-share bids".into())),
        })
        .collect()
}

fn expect_demands<'a>(actions: &[&'a Action]) -> Result<Vec<&'a DemandRow>> {
    actions
        .iter()
        .map(|a| match a {
            Action::Demands(row) => Ok(row),
            Action::Bids(_) => Err(Error::Input("house clearing expects demands".into())),
        })
        .collect()
}

/// Bidders holding the maximal bid on one share, with that bid.
fn tied_set(bids: &[&BidRow], j: usize, l: usize) -> (f64, Vec<usize>) {
    let mut best = 0.0f64;
    for row in bids {
        let b = row[j][l];
        if b > best {
            best = b;
        }
    }
    if best <= TOL {
        return (0.0, Vec::new());
    }
    let tied = bids
        .iter()
        .enumerate()
        .filter(|(_, row)| (row[j][l] - best).abs() <= TOL)
        .map(|(i, _)| i)
        .collect();
    (best, tied)
}

fn price_auction(
    g: &GameInstance,
    actions: &[&Action],
    t: &TieBreakRule,
    second: bool,
) -> Result<Outcome> {
    let bids = expect_bids(actions)?;
    let n = bids.len();
    let rank = t.ranks(n)?;
    let mut rng = match t {
        TieBreakRule::UniformRandom { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut winners = vec![vec![None; g.shares_per_item]; g.num_items];
    let mut prices = vec![vec![0.0; g.shares_per_item]; g.num_items];
    let mut payments = vec![0.0; n];
    for j in 0..g.num_items {
        for l in 0..g.shares_per_item {
            let (best, tied) = tied_set(&bids, j, l);
            if tied.is_empty() {
                continue;
            }
            let w = if tied.len() == 1 {
                tied[0]
            } else if let Some(rng) = rng.as_mut() {
                *tied.choose(rng).expect("tied set nonempty")
            } else {
                *tied.iter().min_by_key(|&&i| rank[i]).expect("tied set nonempty")
            };
            winners[j][l] = Some(w);
            prices[j][l] = best;
            if second {
                let competing = bids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != w)
                    .map(|(_, row)| row[j][l])
                    .fold(0.0, f64::max);
                payments[w] += competing;
            } else {
                payments[w] += bids[w][j][l];
            }
        }
    }
    Ok(Outcome::from_parts(n, winners, payments, prices))
}

/// Per share: the highest positive bid wins (ties via `t`) and pays its own
/// bid; shares with no positive bid stay unallocated.
pub fn run_first_price(g: &GameInstance, b: &BidProfile, t: &TieBreakRule) -> Result<Outcome> {
    let actions: Vec<Action> = b.bids.iter().cloned().map(Action::Bids).collect();
    let refs: Vec<&Action> = actions.iter().collect();
    price_auction(g, &refs, t, false)
}

/// As first price, but the winner pays the highest competing bid on the share
/// (0 when unopposed).
pub fn run_second_price(g: &GameInstance, b: &BidProfile, t: &TieBreakRule) -> Result<Outcome> {
    let actions: Vec<Action> = b.bids.iter().cloned().map(Action::Bids).collect();
    let refs: Vec<&Action> = actions.iter().collect();
    price_auction(g, &refs, t, true)
}

/// House-clearing serve order per item: demand groups by descending price,
/// equal prices resolved by the tie-break rule.
fn house_groups(demands: &[&DemandRow], j: usize) -> Vec<Vec<usize>> {
    let mut live: Vec<usize> = (0..demands.len()).filter(|&i| demands[i][j].is_live()).collect();
    live.sort_by(|&a, &b| {
        demands[b][j]
            .price
            .partial_cmp(&demands[a][j].price)
            .expect("prices are finite")
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in live {
        match groups.last_mut() {
            Some(group) if (demands[group[0]][j].price - demands[i][j].price).abs() <= TOL => {
                group.push(i)
            }
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn serve_item(
    demands: &[&DemandRow],
    j: usize,
    h: usize,
    order: &[usize],
) -> (Vec<(usize, u32, f64)>, Vec<Option<usize>>, Vec<f64>) {
    let mut remaining = h as u32;
    let mut served = Vec::new();
    let mut winners = vec![None; h];
    let mut prices = vec![0.0; h];
    let mut slot = 0usize;
    for &i in order {
        if remaining == 0 {
            break;
        }
        let d = demands[i][j];
        let got = d.count.min(remaining);
        remaining -= got;
        served.push((i, got, d.price));
        for _ in 0..got {
            winners[slot] = Some(i);
            prices[slot] = d.price;
            slot += 1;
        }
    }
    (served, winners, prices)
}

/// Per item, demands are processed in decreasing price-per-share order (ties
/// via `t`); each bidder receives `min(requested, remaining stock)` shares
/// and pays their quoted price per share received.
pub fn run_house_clearing(g: &GameInstance, d: &HouseDemand, t: &TieBreakRule) -> Result<Outcome> {
    let actions: Vec<Action> = d.demands.iter().cloned().map(Action::Demands).collect();
    let refs: Vec<&Action> = actions.iter().collect();
    let demands = expect_demands(&refs)?;
    let n = demands.len();
    let rank = t.ranks(n)?;
    let mut rng = match t {
        TieBreakRule::UniformRandom { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let h = g.shares_per_item;
    let mut winners = Vec::with_capacity(g.num_items);
    let mut prices = Vec::with_capacity(g.num_items);
    let mut payments = vec![0.0; n];
    for j in 0..g.num_items {
        let mut order = Vec::new();
        for mut group in house_groups(&demands, j) {
            if let Some(rng) = rng.as_mut() {
                group.shuffle(rng);
            } else {
                group.sort_by_key(|&i| rank[i]);
            }
            order.extend(group);
        }
        let (served, w, p) = serve_item(&demands, j, h, &order);
        for (i, got, price) in served {
            payments[i] += got as f64 * price;
        }
        winners.push(w);
        prices.push(p);
    }
    Ok(Outcome::from_parts(n, winners, payments, prices))
}

/// Runs `mech` on one pure action profile.
pub fn run_mechanism(
    g: &GameInstance,
    mech: Mechanism,
    actions: &[Action],
    t: &TieBreakRule,
) -> Result<Outcome> {
    let refs: Vec<&Action> = actions.iter().collect();
    run_mechanism_refs(g, mech, &refs, t)
}

/// As [`run_mechanism`], borrowing the actions.
pub fn run_mechanism_refs(
    g: &GameInstance,
    mech: Mechanism,
    actions: &[&Action],
    t: &TieBreakRule,
) -> Result<Outcome> {
    if actions.len() != g.num_bidders() {
        return Err(Error::Input(format!(
            "{} actions for {} bidders",
            actions.len(),
            g.num_bidders()
        )));
    }
    match mech {
        Mechanism::First => price_auction(g, actions, t, false),
        Mechanism::Second => price_auction(g, actions, t, true),
        Mechanism::House => house_single_run(g, actions, t),
    }
}

fn house_single_run(g: &GameInstance, actions: &[&Action], t: &TieBreakRule) -> Result<Outcome> {
    let demands: Vec<DemandRow> = expect_demands(actions)?.into_iter().cloned().collect();
    run_house_clearing(g, &HouseDemand { demands }, t)
}

/// Exact distribution over outcomes of one pure action profile. Deterministic
/// tie-breaking yields a single outcome; uniform tie-breaking is expanded
/// share by share (price auctions) or serve-group by serve-group (house
/// clearing) with exact probabilities. `cap` bounds the number of outcomes.
pub fn outcome_distribution(
    g: &GameInstance,
    mech: Mechanism,
    actions: &[Action],
    t: &TieBreakRule,
    cap: usize,
) -> Result<Vec<(Outcome, f64)>> {
    let refs: Vec<&Action> = actions.iter().collect();
    outcome_distribution_refs(g, mech, &refs, t, cap)
}

/// As [`outcome_distribution`], borrowing the actions.
pub fn outcome_distribution_refs(
    g: &GameInstance,
    mech: Mechanism,
    actions: &[&Action],
    t: &TieBreakRule,
    cap: usize,
) -> Result<Vec<(Outcome, f64)>> {
    if !matches!(t, TieBreakRule::UniformRandom { .. }) {
        return Ok(vec![(run_mechanism_refs(g, mech, actions, t)?, 1.0)]);
    }
    match mech {
        Mechanism::House => house_distribution(g, actions, cap),
        _ => price_distribution(g, actions, mech == Mechanism::Second, cap),
    }
}

fn price_distribution(
    g: &GameInstance,
    actions: &[&Action],
    second: bool,
    cap: usize,
) -> Result<Vec<(Outcome, f64)>> {
    let bids = expect_bids(actions)?;
    let n = bids.len();
    // (share slot, tied set) for every contested share; deterministic shares
    // are resolved up front.
    let mut base_winners = vec![vec![None; g.shares_per_item]; g.num_items];
    let mut base_prices = vec![vec![0.0; g.shares_per_item]; g.num_items];
    let mut branches: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut total = 1usize;
    for j in 0..g.num_items {
        for l in 0..g.shares_per_item {
            let (best, tied) = tied_set(&bids, j, l);
            if tied.is_empty() {
                continue;
            }
            base_prices[j][l] = best;
            if tied.len() == 1 {
                base_winners[j][l] = Some(tied[0]);
            } else {
                total = total.saturating_mul(tied.len());
                if total > cap {
                    return Err(Error::Size {
                        what: "tie outcome expansion".into(),
                        limit: cap as u64,
                        got: total as u64,
                    });
                }
                branches.push((j, l, tied));
            }
        }
    }
    let mut outcomes = Vec::with_capacity(total);
    let mut choice = vec![0usize; branches.len()];
    loop {
        let mut winners = base_winners.clone();
        for (b, &(j, l, ref tied)) in branches.iter().enumerate() {
            winners[j][l] = Some(tied[choice[b]]);
        }
        let mut payments = vec![0.0; n];
        for j in 0..g.num_items {
            for l in 0..g.shares_per_item {
                if let Some(w) = winners[j][l] {
                    if second {
                        let competing = bids
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != w)
                            .map(|(_, row)| row[j][l])
                            .fold(0.0, f64::max);
                        payments[w] += competing;
                    } else {
                        payments[w] += bids[w][j][l];
                    }
                }
            }
        }
        let prob = branches.iter().map(|(_, _, t)| 1.0 / t.len() as f64).product();
        outcomes.push((Outcome::from_parts(n, winners, payments, base_prices.clone()), prob));
        // advance the mixed-radix counter
        let mut k = 0;
        loop {
            if k == branches.len() {
                return Ok(outcomes);
            }
            choice[k] += 1;
            if choice[k] < branches[k].2.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if branches.is_empty() {
            return Ok(outcomes);
        }
    }
}

const HOUSE_GROUP_CAP: usize = 8;

/// Distinct per-item allocations of one uniform-tie house run, each with its
/// probability. Entries are (per-bidder counts, prob).
fn house_item_allocations(
    demands: &[&DemandRow],
    j: usize,
    h: usize,
    n: usize,
) -> Result<Vec<(Vec<u32>, f64)>> {
    let groups = house_groups(demands, j);
    let mut acc: HashMap<Vec<u32>, f64> = HashMap::new();
    // DFS over groups; within a group, permutations matter only while stock
    // can run out mid-group.
    fn go(
        demands: &[&DemandRow],
        j: usize,
        groups: &[Vec<usize>],
        gi: usize,
        remaining: u32,
        counts: &mut Vec<u32>,
        prob: f64,
        acc: &mut HashMap<Vec<u32>, f64>,
    ) -> Result<()> {
        if gi == groups.len() || remaining == 0 {
            *acc.entry(counts.clone()).or_insert(0.0) += prob;
            return Ok(());
        }
        let group = &groups[gi];
        let want: u32 = group.iter().map(|&i| demands[i][j].count).sum();
        if want <= remaining {
            // everyone in the group is fully served; order is irrelevant
            for &i in group {
                counts[i] += demands[i][j].count;
            }
            go(demands, j, groups, gi + 1, remaining - want, counts, prob, acc)?;
            for &i in group {
                counts[i] -= demands[i][j].count;
            }
            return Ok(());
        }
        if group.len() > HOUSE_GROUP_CAP {
            return Err(Error::Size {
                what: "house tie group permutation".into(),
                limit: HOUSE_GROUP_CAP as u64,
                got: group.len() as u64,
            });
        }
        // Stock runs out inside this group: enumerate member orders.
        let mut perm: Vec<usize> = group.clone();
        permute(&mut perm, 0, &mut |order| {
            let mut rem = remaining;
            let mut local = counts.clone();
            for &i in order.iter() {
                if rem == 0 {
                    break;
                }
                let got = demands[i][j].count.min(rem);
                local[i] += got;
                rem -= got;
            }
            let p = prob / factorial(group.len());
            *acc.entry(local).or_insert(0.0) += p;
        });
        Ok(())
    }
    let mut counts = vec![0u32; n];
    go(demands, j, &groups, 0, h as u32, &mut counts, 1.0, &mut acc)?;
    let mut out: Vec<(Vec<u32>, f64)> = acc.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product::<f64>().max(1.0)
}

fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, k: usize, f: &mut F) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

fn house_distribution(
    g: &GameInstance,
    actions: &[&Action],
    cap: usize,
) -> Result<Vec<(Outcome, f64)>> {
    let demands = expect_demands(actions)?;
    let n = demands.len();
    let h = g.shares_per_item;
    let mut partial: Vec<(Vec<Vec<u32>>, f64)> = vec![(Vec::new(), 1.0)];
    for j in 0..g.num_items {
        let item_allocs = house_item_allocations(&demands, j, h, n)?;
        let mut next = Vec::with_capacity(partial.len() * item_allocs.len());
        for (alloc_so_far, p) in &partial {
            for (counts, q) in &item_allocs {
                let mut alloc = alloc_so_far.clone();
                alloc.push(counts.clone());
                next.push((alloc, p * q));
            }
        }
        if next.len() > cap {
            return Err(Error::Size {
                what: "house tie outcome expansion".into(),
                limit: cap as u64,
                got: next.len() as u64,
            });
        }
        partial = next;
    }
    let outcomes = partial
        .into_iter()
        .map(|(alloc, p)| {
            // materialize winners per share in bidder order within each item
            let mut winners = Vec::with_capacity(g.num_items);
            let mut prices = Vec::with_capacity(g.num_items);
            let mut payments = vec![0.0; n];
            for (j, counts) in alloc.iter().enumerate() {
                let mut w = vec![None; h];
                let mut pr = vec![0.0; h];
                let mut slot = 0usize;
                for (i, &c) in counts.iter().enumerate() {
                    let price = demands[i][j].price;
                    payments[i] += c as f64 * price;
                    for _ in 0..c {
                        w[slot] = Some(i);
                        pr[slot] = price;
                        slot += 1;
                    }
                }
                winners.push(w);
                prices.push(pr);
            }
            (Outcome::from_parts(n, winners, payments, prices), p)
        })
        .collect();
    Ok(outcomes)
}

/// Utility of `bundle` at `payment` for a bidder with `valuation`/`budget`:
/// value minus payment, or negative infinity past the budget.
pub fn bidder_utility(
    valuation: &Valuation,
    budget: f64,
    bundle: &ShareBundle,
    payment: f64,
    h: usize,
) -> f64 {
    if !approx_le(payment, budget) {
        return f64::NEG_INFINITY;
    }
    valuation.value(bundle, h).expect("bundle matches valuation") - payment
}

/// Utility of bidder `i` in outcome `o`.
pub fn utility(g: &GameInstance, i: usize, o: &Outcome) -> f64 {
    bidder_utility(
        &g.bidders[i].valuation,
        g.bidders[i].budget,
        &o.bundles[i],
        o.payments[i],
        g.shares_per_item,
    )
}

/// Largest instance (in total shares) where the XOS no-overbidding check is
/// exhaustive over share bundles.
pub const EXACT_SUBSET_SHARES: usize = 12;

/// No over-bidding: the bids of bidder `i` on any bundle of shares never
/// exceed its value. Exact for additive valuations; for XOS the subset
/// condition is checked exhaustively up to [`EXACT_SUBSET_SHARES`] total
/// shares and by a conservative single-clause domination test beyond.
pub fn check_no_overbidding(g: &GameInstance, i: usize, row: &BidRow) -> bool {
    let h = g.shares_per_item;
    let val = &g.bidders[i].valuation;
    match val {
        Valuation::Additive { values } => row.iter().enumerate().all(|(j, shares)| {
            shares.iter().all(|b| approx_le(*b, values[j] / h as f64))
        }),
        Valuation::Xos { clauses } => {
            // necessary per-share bound
            let per_share_ok = row.iter().enumerate().all(|(j, shares)| {
                let cap = val.item_value(j) / h as f64;
                shares.iter().all(|b| approx_le(*b, cap))
            });
            if !per_share_ok {
                return false;
            }
            if g.total_shares() <= EXACT_SUBSET_SHARES {
                exact_subset_no_overbid(val, row, g.num_items, h)
            } else {
                clauses.iter().any(|clause| {
                    row.iter().enumerate().all(|(j, shares)| {
                        shares.iter().all(|b| approx_le(*b, clause[j] / h as f64))
                    })
                })
            }
        }
    }
}

/// Worst bundles take the largest bids per item, so it suffices to scan
/// per-item share counts against prefix sums of the sorted bids.
fn exact_subset_no_overbid(val: &Valuation, row: &BidRow, m: usize, h: usize) -> bool {
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(m);
    for shares in row {
        let mut sorted = shares.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("bids are finite"));
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
        if !approx_le(bid_sum, val.value(&bundle, h).expect("dims match")) {
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

/// No over-budgeting: total bids of bidder `i` stay within their budget.
pub fn check_no_overbudget(g: &GameInstance, i: usize, row: &BidRow) -> bool {
    let total: f64 = row.iter().flatten().sum();
    approx_le(total, g.bidders[i].budget)
}

/// Validates a bid profile against the instance: dimensions and grid.
pub fn validate_bid_profile(g: &GameInstance, b: &BidProfile) -> Vec<String> {
    let mut report = Vec::new();
    if b.bids.len() != g.num_bidders() {
        report.push(format!("{} bid rows for {} bidders", b.bids.len(), g.num_bidders()));
        return report;
    }
    for (i, row) in b.bids.iter().enumerate() {
        if row.len() != g.num_items {
            report.push(format!("bidder {i}: {} items in bid row, expected {}", row.len(), g.num_items));
            continue;
        }
        for (j, shares) in row.iter().enumerate() {
            if shares.len() != g.shares_per_item {
                report.push(format!("bidder {i} item {j}: {} shares, expected {}", shares.len(), g.shares_per_item));
                continue;
            }
            for (l, bid) in shares.iter().enumerate() {
                if *bid < -TOL {
                    report.push(format!("bidder {i} item {j} share {l}: negative bid"));
                } else {
                    let units = bid / g.bid_grid_step;
                    if (units - units.round()).abs() > 1e-6 {
                        report.push(format!(
                            "bidder {i} item {j} share {l}: bid {bid} off the grid step {}",
                            g.bid_grid_step
                        ));
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Bidder;

    fn tightness_game() -> GameInstance {
        GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![10.0, 0.0]), budget: 9.9 },
                Bidder { valuation: Valuation::additive(vec![10.0, 10.0]), budget: 10.0 },
            ],
            2,
            1,
            0.05,
        )
    }

    fn profile(rows: Vec<Vec<Vec<f64>>>) -> BidProfile {
        BidProfile { bids: rows }
    }

    #[test]
    fn first_price_winner_pays_own_bid() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![0.0], vec![0.0]], vec![vec![9.95], vec![0.05]]]);
        let o = run_first_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o.winners, vec![vec![Some(1)], vec![Some(1)]]);
        assert!((o.payments[1] - 10.0).abs() <= TOL);
        assert!(o.payments[0].abs() <= TOL);
    }

    #[test]
    fn all_zero_bids_leave_shares_unallocated() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![0.0], vec![0.0]], vec![vec![0.0], vec![0.0]]]);
        let o = run_first_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o.winners, vec![vec![None], vec![None]]);
        assert!(o.payments.iter().all(|p| p.abs() <= TOL));
    }

    #[test]
    fn lexicographic_tie_goes_to_preferred() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 5.0 },
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 5.0 },
            ],
            1,
            1,
            0.05,
        );
        let b = profile(vec![vec![vec![1.0]], vec![vec![1.0]]]);
        let o = run_first_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o.winners[0][0], Some(0));
        assert!((o.payments[0] - 1.0).abs() <= TOL);
    }

    #[test]
    fn second_price_charges_best_competitor() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![0.0], vec![0.0]], vec![vec![9.95], vec![0.05]]]);
        let o = run_second_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o.winners, vec![vec![Some(1)], vec![Some(1)]]);
        assert!(o.payments[1].abs() <= TOL);
        assert!((utility(&g, 1, &o) - 20.0).abs() <= TOL);

        let g2 = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![9.0]), budget: 9.0 },
                Bidder { valuation: Valuation::additive(vec![9.0]), budget: 9.0 },
            ],
            1,
            1,
            1.0,
        );
        let b2 = profile(vec![vec![vec![5.0]], vec![vec![2.0]]]);
        let o2 = run_second_price(&g2, &b2, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o2.winners[0][0], Some(0));
        assert!((o2.payments[0] - 2.0).abs() <= TOL);
    }

    #[test]
    fn single_bidder_pays_zero_in_second_price() {
        let g = GameInstance::new(
            vec![Bidder { valuation: Valuation::additive(vec![5.0]), budget: 5.0 }],
            1,
            1,
            0.05,
        );
        let b = profile(vec![vec![vec![3.0]]]);
        let o = run_second_price(&g, &b, &TieBreakRule::lexicographic(1)).unwrap();
        assert_eq!(o.winners[0][0], Some(0));
        assert!(o.payments[0].abs() <= TOL);
    }

    #[test]
    fn house_clearing_serves_in_price_order() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![10.0]), budget: 10.0 },
                Bidder { valuation: Valuation::additive(vec![10.0]), budget: 10.0 },
            ],
            1,
            10,
            0.05,
        );
        let d = HouseDemand {
            demands: vec![
                vec![Demand { count: 6, price: 1.0 }],
                vec![Demand { count: 6, price: 0.9 }],
            ],
        };
        let o = run_house_clearing(&g, &d, &TieBreakRule::lexicographic(2)).unwrap();
        assert_eq!(o.bundles[0].counts[0], 6);
        assert_eq!(o.bundles[1].counts[0], 4);
        assert!((o.payments[0] - 6.0).abs() <= TOL);
        assert!((o.payments[1] - 3.6).abs() <= TOL);
    }

    #[test]
    fn house_single_demand_partial_stock() {
        let g = GameInstance::new(
            vec![Bidder { valuation: Valuation::additive(vec![10.0]), budget: 10.0 }],
            1,
            10,
            0.05,
        );
        let d = HouseDemand { demands: vec![vec![Demand { count: 4, price: 0.5 }]] };
        let o = run_house_clearing(&g, &d, &TieBreakRule::lexicographic(1)).unwrap();
        assert_eq!(o.bundles[0].counts[0], 4);
        assert!((o.payments[0] - 2.0).abs() <= TOL);
    }

    #[test]
    fn house_equal_prices_respect_lexicographic_order() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![4.0]), budget: 4.0 },
                Bidder { valuation: Valuation::additive(vec![4.0]), budget: 4.0 },
            ],
            1,
            3,
            0.05,
        );
        let d = HouseDemand {
            demands: vec![
                vec![Demand { count: 2, price: 1.0 }],
                vec![Demand { count: 2, price: 1.0 }],
            ],
        };
        let favored_last = TieBreakRule::Lexicographic { order: vec![1, 0] };
        let o = run_house_clearing(&g, &d, &favored_last).unwrap();
        assert_eq!(o.bundles[1].counts[0], 2);
        assert_eq!(o.bundles[0].counts[0], 1);
    }

    #[test]
    fn uniform_tie_distribution_is_exact() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 2.0 },
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 2.0 },
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 2.0 },
            ],
            1,
            1,
            0.05,
        );
        let actions: Vec<Action> = vec![
            Action::Bids(vec![vec![1.0]]),
            Action::Bids(vec![vec![1.0]]),
            Action::Bids(vec![vec![0.5]]),
        ];
        let dist = outcome_distribution(
            &g,
            Mechanism::First,
            &actions,
            &TieBreakRule::uniform(7),
            1_000,
        )
        .unwrap();
        assert_eq!(dist.len(), 2);
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() <= TOL);
        for (o, p) in &dist {
            assert!((p - 0.5).abs() <= TOL);
            assert!(matches!(o.winners[0][0], Some(0) | Some(1)));
        }
    }

    #[test]
    fn house_uniform_ties_split_stock_evenly() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![3.0]), budget: 3.0 },
                Bidder { valuation: Valuation::additive(vec![3.0]), budget: 3.0 },
                Bidder { valuation: Valuation::additive(vec![3.0]), budget: 3.0 },
            ],
            1,
            2,
            0.05,
        );
        let actions: Vec<Action> = (0..3)
            .map(|_| Action::Demands(vec![Demand { count: 1, price: 1.0 }]))
            .collect();
        let dist =
            outcome_distribution(&g, Mechanism::House, &actions, &TieBreakRule::uniform(3), 1_000)
                .unwrap();
        // three ways to pick the two served bidders
        assert_eq!(dist.len(), 3);
        let mut win_prob = vec![0.0; 3];
        for (o, p) in &dist {
            for i in 0..3 {
                if o.bundles[i].counts[0] == 1 {
                    win_prob[i] += p;
                }
            }
        }
        for w in win_prob {
            assert!((w - 2.0 / 3.0).abs() <= TOL);
        }
    }

    #[test]
    fn utility_is_neg_infinity_past_budget() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![0.0], vec![0.0]], vec![vec![9.95], vec![0.1]]]);
        let o = run_first_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        assert!((o.payments[1] - 10.05).abs() <= TOL);
        assert_eq!(utility(&g, 1, &o), f64::NEG_INFINITY);
        assert!(utility(&g, 0, &o).abs() <= TOL);
    }

    #[test]
    fn overbidding_checks() {
        let g = GameInstance::new(
            vec![Bidder { valuation: Valuation::additive(vec![10.0, 0.0]), budget: 20.0 }],
            2,
            1,
            0.05,
        );
        assert!(check_no_overbidding(&g, 0, &vec![vec![10.0], vec![0.0]]));
        assert!(!check_no_overbidding(&g, 0, &vec![vec![10.05], vec![0.0]]));
        assert!(!check_no_overbidding(&g, 0, &vec![vec![0.0], vec![0.05]]));
    }

    #[test]
    fn xos_overbidding_subset_condition() {
        let g = GameInstance::new(
            vec![Bidder {
                valuation: Valuation::xos(vec![vec![3.0, 0.0], vec![0.0, 4.0]]),
                budget: 20.0,
            }],
            2,
            1,
            0.05,
        );
        // per-share caps allow 3 and 4 but the pair bundle is worth only 4
        assert!(!check_no_overbidding(&g, 0, &vec![vec![3.0], vec![4.0]]));
        assert!(check_no_overbidding(&g, 0, &vec![vec![0.0], vec![4.0]]));
        assert!(check_no_overbidding(&g, 0, &vec![vec![2.0], vec![2.0]]));
    }

    #[test]
    fn xos_overbidding_conservative_beyond_exact_cap() {
        // 14 shares: the exact subset scan is off; a row inside one clause
        // passes, a cross-clause mix is rejected conservatively
        let g = GameInstance::new(
            vec![Bidder {
                valuation: Valuation::xos(vec![vec![7.0, 0.0], vec![0.0, 7.0]]),
                budget: 100.0,
            }],
            2,
            7,
            0.05,
        );
        let within_clause = vec![vec![1.0; 7], vec![0.0; 7]];
        assert!(check_no_overbidding(&g, 0, &within_clause));
        let cross_clause = vec![vec![1.0; 7], vec![1.0; 7]];
        assert!(!check_no_overbidding(&g, 0, &cross_clause));
    }

    #[test]
    fn house_distinct_prices_ignore_tie_rule() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![5.0]), budget: 5.0 },
                Bidder { valuation: Valuation::additive(vec![5.0]), budget: 5.0 },
                Bidder { valuation: Valuation::additive(vec![5.0]), budget: 5.0 },
            ],
            1,
            4,
            0.05,
        );
        let d = HouseDemand {
            demands: vec![
                vec![Demand { count: 2, price: 0.9 }],
                vec![Demand { count: 2, price: 1.0 }],
                vec![Demand { count: 2, price: 0.8 }],
            ],
        };
        let lex = run_house_clearing(&g, &d, &TieBreakRule::Lexicographic { order: vec![2, 1, 0] })
            .unwrap();
        let uni = run_house_clearing(&g, &d, &TieBreakRule::uniform(99)).unwrap();
        assert_eq!(lex.bundles, uni.bundles);
        assert_eq!(lex.payments, uni.payments);
    }

    #[test]
    fn overbudget_check() {
        let g = GameInstance::new(
            vec![Bidder { valuation: Valuation::additive(vec![5.0, 5.0]), budget: 1.0 }],
            2,
            1,
            0.05,
        );
        assert!(check_no_overbudget(&g, 0, &vec![vec![0.5], vec![0.5]]));
        assert!(!check_no_overbudget(&g, 0, &vec![vec![0.55], vec![0.5]]));
        assert!(check_no_overbudget(&g, 0, &vec![vec![0.0], vec![0.0]]));
    }

    #[test]
    fn second_price_never_exceeds_first_price_payment() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![9.0], vec![0.0]], vec![vec![9.95], vec![0.05]]]);
        let t = TieBreakRule::lexicographic(2);
        let fp = run_first_price(&g, &b, &t).unwrap();
        let sp = run_second_price(&g, &b, &t).unwrap();
        for i in 0..2 {
            assert!(sp.payments[i] <= fp.payments[i] + TOL);
        }
    }

    #[test]
    fn outcome_json_marks_unallocated_with_minus_one() {
        let g = tightness_game();
        let b = profile(vec![vec![vec![0.0], vec![0.0]], vec![vec![9.95], vec![0.0]]]);
        let o = run_first_price(&g, &b, &TieBreakRule::lexicographic(2)).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&o.to_json()).unwrap();
        assert_eq!(doc["winners"][0][0], serde_json::json!(1));
        assert_eq!(doc["winners"][1][0], serde_json::json!(-1));
        assert!((doc["payments"][1].as_f64().unwrap() - 9.95).abs() <= TOL);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 2.0 },
                Bidder { valuation: Valuation::additive(vec![2.0]), budget: 2.0 },
            ],
            1,
            1,
            0.05,
        );
        let b = profile(vec![vec![vec![1.0]], vec![vec![1.0]]]);
        let t = TieBreakRule::uniform(42);
        let o1 = run_first_price(&g, &b, &t).unwrap();
        let o2 = run_first_price(&g, &b, &t).unwrap();
        assert_eq!(o1, o2);
    }
}
