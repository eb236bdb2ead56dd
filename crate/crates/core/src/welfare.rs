//! Liquid welfare, revenue, and exact optimal liquid welfare over share
//! assignments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameInstance, ShareBundle, TOL};
use crate::mechanisms::Outcome;

/// Welfare measures of one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub liquid_welfare: f64,
    pub social_welfare: f64,
    pub revenue: f64,
}

/// Liquid welfare of an outcome: sum over bidders of min(value, budget).
pub fn liquid_welfare(g: &GameInstance, o: &Outcome) -> f64 {
    g.bidders
        .iter()
        .zip(&o.bundles)
        .map(|(bidder, bundle)| {
            bidder
                .valuation
                .value(bundle, g.shares_per_item)
                .expect("outcome matches instance")
                .min(bidder.budget)
        })
        .sum()
}

/// Social welfare of an outcome: sum of uncapped values.
pub fn social_welfare(g: &GameInstance, o: &Outcome) -> f64 {
    g.bidders
        .iter()
        .zip(&o.bundles)
        .map(|(bidder, bundle)| {
            bidder.valuation.value(bundle, g.shares_per_item).expect("outcome matches instance")
        })
        .sum()
}

pub fn welfare_report(g: &GameInstance, o: &Outcome) -> WelfareReport {
    WelfareReport {
        liquid_welfare: liquid_welfare(g, o),
        social_welfare: social_welfare(g, o),
        revenue: revenue(o),
    }
}

/// Ex-post expected liquid welfare of a finite outcome distribution.
pub fn expected_liquid_welfare(g: &GameInstance, dist: &[(Outcome, f64)]) -> Result<f64> {
    let total: f64 = dist.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("outcome distribution sums to {total}, not 1")));
    }
    if dist.iter().any(|(_, p)| *p < -TOL) {
        return Err(Error::Input("negative probability in outcome distribution".into()));
    }
    Ok(dist.iter().map(|(o, p)| p * liquid_welfare(g, o)).sum())
}

/// Total payments collected by the seller.
pub fn revenue(o: &Outcome) -> f64 {
    o.payments.iter().sum()
}

/// Largest exhaustive OPT search, in total shares.
pub const OPT_EXACT_MAX_SHARES: usize = 12;

/// An optimal share assignment and its liquid welfare.
#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub value: f64,
    /// `allocation[item][share]`, `None` for unassigned shares.
    pub allocation: Vec<Vec<Option<usize>>>,
    pub bundles: Vec<ShareBundle>,
}

impl OptResult {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            value: f64,
            allocation: Vec<Vec<i64>>,
        }
        let doc = Doc {
            value: self.value,
            allocation: self
                .allocation
                .iter()
                .map(|row| row.iter().map(|w| w.map_or(-1, |i| i as i64)).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("opt result serializes")
    }
}

struct OptSearch<'a> {
    g: &'a GameInstance,
    slots: Vec<(usize, usize)>,
    /// Per bidder, suffix sums over slots of an additive upper bound on the
    /// marginal value of each slot.
    suffix_value: Vec<Vec<f64>>,
    best_value: f64,
    best_assignment: Vec<Option<usize>>,
    assignment: Vec<Option<usize>>,
    bundles: Vec<ShareBundle>,
}

impl<'a> OptSearch<'a> {
    fn capped_total(&self) -> f64 {
        let h = self.g.shares_per_item;
        self.g
            .bidders
            .iter()
            .zip(&self.bundles)
            .map(|(b, bundle)| b.valuation.value(bundle, h).expect("dims").min(b.budget))
            .sum()
    }

    /// Admissible bound: every bidder additionally receives everything that
    /// remains, still capped by their budget.
    fn upper_bound(&self, depth: usize) -> f64 {
        let h = self.g.shares_per_item;
        self.g
            .bidders
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let current = b.valuation.value(&self.bundles[i], h).expect("dims");
                (current + self.suffix_value[i][depth]).min(b.budget)
            })
            .sum()
    }

    fn dfs(&mut self, depth: usize) {
        if depth == self.slots.len() {
            let total = self.capped_total();
            if total > self.best_value + TOL {
                self.best_value = total;
                self.best_assignment = self.assignment.clone();
            }
            return;
        }
        if self.upper_bound(depth) <= self.best_value + TOL {
            return;
        }
        let (j, _) = self.slots[depth];
        for choice in 0..=self.g.num_bidders() {
            if choice < self.g.num_bidders() {
                self.assignment[depth] = Some(choice);
                self.bundles[choice].counts[j] += 1;
                self.dfs(depth + 1);
                self.bundles[choice].counts[j] -= 1;
            } else {
                self.assignment[depth] = None;
                self.dfs(depth + 1);
            }
        }
        self.assignment[depth] = None;
    }
}

/// Exact optimal liquid welfare by branch-and-bound over share assignments
/// (leaving shares unassigned is allowed). Refuses instances with more than
/// [`OPT_EXACT_MAX_SHARES`] total shares.
pub fn opt_exact(g: &GameInstance) -> Result<OptResult> {
    let total = g.total_shares();
    if total > OPT_EXACT_MAX_SHARES {
        return Err(Error::Size {
            what: "exhaustive OPT over total shares".into(),
            limit: OPT_EXACT_MAX_SHARES as u64,
            got: total as u64,
        });
    }
    let n = g.num_bidders();
    let h = g.shares_per_item;
    let mut slots: Vec<(usize, usize)> = (0..g.num_items)
        .flat_map(|j| (0..h).map(move |l| (j, l)))
        .collect();
    // visit valuable slots first: tightens the bound sooner
    slots.sort_by(|a, b| {
        let va: f64 = (0..n).map(|i| g.bidders[i].valuation.item_value(a.0)).fold(0.0, f64::max);
        let vb: f64 = (0..n).map(|i| g.bidders[i].valuation.item_value(b.0)).fold(0.0, f64::max);
        vb.partial_cmp(&va).expect("finite values").then(a.cmp(b))
    });
    let mut suffix_value = vec![vec![0.0; slots.len() + 1]; n];
    for i in 0..n {
        for (d, &(j, _)) in slots.iter().enumerate().rev() {
            suffix_value[i][d] =
                suffix_value[i][d + 1] + g.bidders[i].valuation.item_value_upper(j) / h as f64;
        }
    }
    let (seed_value, seed_assignment) = greedy_seed(g, &slots);
    let mut search = OptSearch {
        g,
        suffix_value,
        best_value: seed_value,
        best_assignment: seed_assignment,
        assignment: vec![None; slots.len()],
        bundles: vec![ShareBundle::empty(g.num_items); n],
        slots,
    };
    search.dfs(0);

    let mut allocation = vec![vec![None; h]; g.num_items];
    let mut bundles = vec![ShareBundle::empty(g.num_items); n];
    for (d, &(j, l)) in search.slots.iter().enumerate() {
        if let Some(i) = search.best_assignment.get(d).copied().flatten() {
            allocation[j][l] = Some(i);
            bundles[i].counts[j] += 1;
        }
    }
    Ok(OptResult { value: search.best_value, allocation, bundles })
}

/// Greedy seed for the branch-and-bound: assign each slot to the bidder with
/// the best budget-capped marginal gain.
fn greedy_seed(g: &GameInstance, slots: &[(usize, usize)]) -> (f64, Vec<Option<usize>>) {
    let h = g.shares_per_item;
    let n = g.num_bidders();
    let mut bundles = vec![ShareBundle::empty(g.num_items); n];
    let mut assignment = vec![None; slots.len()];
    let mut capped: Vec<f64> = g
        .bidders
        .iter()
        .map(|b| b.valuation.value(&ShareBundle::empty(g.num_items), h).expect("dims").min(b.budget))
        .collect();
    for (d, &(j, _)) in slots.iter().enumerate() {
        let mut best_gain = 0.0;
        let mut best_i = None;
        for i in 0..n {
            bundles[i].counts[j] += 1;
            let v = g.bidders[i].valuation.value(&bundles[i], h).expect("dims").min(g.bidders[i].budget);
            bundles[i].counts[j] -= 1;
            let gain = v - capped[i];
            if gain > best_gain + TOL {
                best_gain = gain;
                best_i = Some(i);
            }
        }
        if let Some(i) = best_i {
            bundles[i].counts[j] += 1;
            capped[i] += best_gain;
            assignment[d] = Some(i);
        }
    }
    (capped.iter().sum(), assignment)
}

/// The liquid price of anarchy ratio OPT / eqLW.
pub fn lpoa(opt_value: f64, eq_lw: f64) -> Result<f64> {
    if eq_lw <= TOL {
        return Err(Error::DegenerateEquilibrium(format!(
            "equilibrium liquid welfare {eq_lw} is not positive"
        )));
    }
    Ok(opt_value / eq_lw)
}
