//! Auction game model: bidders, valuations, budgets, items split into shares,
//! and the discretized bid grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global comparison tolerance for values, budgets and welfare.
pub const TOL: f64 = 1e-9;

/// `a` and `b` equal up to [`TOL`].
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// `a <= b` up to [`TOL`].
pub fn approx_le(a: f64, b: f64) -> bool {
    a <= b + TOL
}

/// A valuation over bundles of item shares.
///
/// `Additive` holds one per-item value; a bundle is worth the sum of the
/// per-share values it contains. `Xos` is a pointwise maximum of additive
/// clauses (fractionally-subadditive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Valuation {
    Additive { values: Vec<f64> },
    Xos { clauses: Vec<Vec<f64>> },
}

impl Valuation {
    pub fn additive(values: Vec<f64>) -> Self {
        Valuation::Additive { values }
    }

    pub fn xos(clauses: Vec<Vec<f64>>) -> Self {
        Valuation::Xos { clauses }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, Valuation::Additive { .. })
    }

    /// Number of items this valuation speaks about (0 for an empty XOS).
    pub fn num_items(&self) -> usize {
        match self {
            Valuation::Additive { values } => values.len(),
            Valuation::Xos { clauses } => clauses.first().map_or(0, |c| c.len()),
        }
    }

    /// Value of `item` alone (all of its shares). For XOS this is the best
    /// single-item clause entry.
    pub fn item_value(&self, item: usize) -> f64 {
        match self {
            Valuation::Additive { values } => values[item],
            Valuation::Xos { clauses } => clauses
                .iter()
                .map(|c| c[item])
                .fold(0.0, f64::max),
        }
    }

    /// Largest per-item entry across clauses; for additive, the value itself.
    /// Upper-bounds the marginal value of one full item under XOS.
    pub fn item_value_upper(&self, item: usize) -> f64 {
        self.item_value(item)
    }

    fn additive_bundle_value(values: &[f64], bundle: &ShareBundle, h: usize) -> f64 {
        values
            .iter()
            .zip(&bundle.counts)
            .map(|(v, &c)| v * c as f64 / h as f64)
            .sum()
    }

    /// Value of a share bundle when every item has `h` shares.
    pub fn value(&self, bundle: &ShareBundle, h: usize) -> Result<f64> {
        if bundle.counts.len() != self.num_items() {
            return Err(Error::Model(format!(
                "bundle has {} items, valuation has {}",
                bundle.counts.len(),
                self.num_items()
            )));
        }
        Ok(match self {
            Valuation::Additive { values } => Self::additive_bundle_value(values, bundle, h),
            Valuation::Xos { clauses } => clauses
                .iter()
                .map(|c| Self::additive_bundle_value(c, bundle, h))
                .fold(0.0, f64::max),
        })
    }

    /// Index of a clause achieving `value(bundle)`; ties to the lowest index.
    pub fn maximizing_clause(&self, bundle: &ShareBundle, h: usize) -> Result<usize> {
        let clauses = match self {
            Valuation::Xos { clauses } => clauses,
            Valuation::Additive { .. } => {
                return Err(Error::Model("maximizing_clause requires an XOS valuation".into()))
            }
        };
        if bundle.counts.len() != self.num_items() {
            return Err(Error::Model("bundle dimension mismatch".into()));
        }
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for (r, clause) in clauses.iter().enumerate() {
            let v = Self::additive_bundle_value(clause, bundle, h);
            if v > best_val + TOL {
                best = r;
                best_val = v;
            }
        }
        Ok(best)
    }
}

/// A bidder: valuation plus a hard budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bidder {
    pub valuation: Valuation,
    pub budget: f64,
}

/// Counts of shares held per item, each in `0..=h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShareBundle {
    pub counts: Vec<u32>,
}

impl ShareBundle {
    pub fn empty(num_items: usize) -> Self {
        ShareBundle { counts: vec![0; num_items] }
    }

    pub fn full(num_items: usize, h: usize) -> Self {
        ShareBundle { counts: vec![h as u32; num_items] }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Componentwise containment.
    pub fn subset_of(&self, other: &ShareBundle) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }
}

/// A complete auction instance: bidders, `m` items each split into `h`
/// identical shares, and the bid grid step (all legal bids are nonnegative
/// multiples of it).
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub bidders: Vec<Bidder>,
    pub num_items: usize,
    pub shares_per_item: usize,
    pub bid_grid_step: f64,
}

/// Default bid grid step when an instance does not pin one.
pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Serialize, Deserialize)]
struct GameInstanceDoc {
    n: usize,
    m: usize,
    h: usize,
    epsilon: f64,
    bidders: Vec<Bidder>,
}

impl GameInstance {
    pub fn new(bidders: Vec<Bidder>, num_items: usize, shares_per_item: usize, bid_grid_step: f64) -> Self {
        GameInstance { bidders, num_items, shares_per_item, bid_grid_step }
    }

    pub fn num_bidders(&self) -> usize {
        self.bidders.len()
    }

    /// Total number of share slots, `m * h`.
    pub fn total_shares(&self) -> usize {
        self.num_items * self.shares_per_item
    }

    pub fn to_json(&self) -> String {
        let doc = GameInstanceDoc {
            n: self.bidders.len(),
            m: self.num_items,
            h: self.shares_per_item,
            epsilon: self.bid_grid_step,
            bidders: self.bidders.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GameInstanceDoc =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("instance JSON: {e}")))?;
        if doc.n != doc.bidders.len() {
            return Err(Error::Input(format!(
                "instance JSON: n={} but {} bidders listed",
                doc.n,
                doc.bidders.len()
            )));
        }
        let g = GameInstance::new(doc.bidders, doc.m, doc.h, doc.epsilon);
        let report = validate_instance(&g);
        if !report.is_empty() {
            return Err(Error::Model(report.join("; ")));
        }
        Ok(g)
    }
}

/// Checks every type invariant and returns a list of violations; an empty
/// list means the instance is valid.
pub fn validate_instance(g: &GameInstance) -> Vec<String> {
    let mut report = Vec::new();
    if g.bidders.is_empty() {
        report.push("instance has no bidders".to_string());
    }
    if g.num_items == 0 {
        report.push("instance has no items".to_string());
    }
    if g.shares_per_item == 0 {
        report.push("sharesPerItem must be >= 1".to_string());
    }
    if g.bid_grid_step <= 0.0 {
        report.push("bidGridStep must be > 0".to_string());
    }
    for (i, bidder) in g.bidders.iter().enumerate() {
        if bidder.budget < 0.0 {
            report.push(format!("bidder {i}: negative budget {}", bidder.budget));
        }
        match &bidder.valuation {
            Valuation::Additive { values } => {
                if values.len() != g.num_items {
                    report.push(format!(
                        "bidder {i}: additive vector has length {} for {} items",
                        values.len(),
                        g.num_items
                    ));
                }
                for (j, v) in values.iter().enumerate() {
                    if *v < 0.0 {
                        report.push(format!("bidder {i}: negative value {v} for item {j}"));
                    }
                }
            }
            Valuation::Xos { clauses } => {
                if clauses.is_empty() {
                    report.push(format!("bidder {i}: XOS valuation has no clauses"));
                }
                for (r, clause) in clauses.iter().enumerate() {
                    if clause.len() != g.num_items {
                        report.push(format!(
                            "bidder {i}: XOS clause {r} has length {} for {} items",
                            clause.len(),
                            g.num_items
                        ));
                    }
                    for (j, v) in clause.iter().enumerate() {
                        if *v < 0.0 {
                            report.push(format!(
                                "bidder {i}: negative value {v} in clause {r}, item {j}"
                            ));
                        }
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

    fn bundle(counts: &[u32]) -> ShareBundle {
        ShareBundle { counts: counts.to_vec() }
    }

    #[test]
    fn additive_values_scale_by_share_fraction() {
        let v = Valuation::additive(vec![10.0, 0.0]);
        assert!(approx_eq(v.value(&bundle(&[1, 0]), 1).unwrap(), 10.0));
        assert!(approx_eq(v.value(&bundle(&[0, 0]), 1).unwrap(), 0.0));
    }

    #[test]
    fn xos_takes_best_clause() {
        let v = Valuation::xos(vec![vec![3.0, 0.0], vec![0.0, 4.0]]);
        // clause 0: 3*(2/2) = 3, clause 1: 4*(1/2) = 2
        assert!(approx_eq(v.value(&bundle(&[2, 1]), 2).unwrap(), 3.0));
        assert!(approx_eq(v.value(&bundle(&[0, 0]), 2).unwrap(), 0.0));
    }

    #[test]
    fn full_bundle_value_is_the_sum() {
        let v = Valuation::additive(vec![1.5, 2.5, 0.5]);
        let full = ShareBundle::full(3, 4);
        assert!(approx_eq(v.value(&full, 4).unwrap(), 4.5));
    }

    #[test]
    fn maximizing_clause_breaks_ties_low() {
        let v = Valuation::xos(vec![vec![3.0, 0.0], vec![0.0, 4.0]]);
        assert_eq!(v.maximizing_clause(&bundle(&[2, 0]), 2).unwrap(), 0);
        let single = Valuation::xos(vec![vec![1.0, 1.0]]);
        assert_eq!(single.maximizing_clause(&bundle(&[1, 1]), 1).unwrap(), 0);
        let tied = Valuation::xos(vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        assert_eq!(tied.maximizing_clause(&bundle(&[1, 1]), 1).unwrap(), 0);
    }

    #[test]
    fn maximizing_clause_rejects_additive() {
        let v = Valuation::additive(vec![1.0]);
        assert!(v.maximizing_clause(&bundle(&[1]), 1).is_err());
    }

    #[test]
    fn dimension_mismatch_is_a_model_error() {
        let v = Valuation::additive(vec![1.0, 2.0]);
        assert!(v.value(&bundle(&[1]), 1).is_err());
    }

    #[test]
    fn validate_reports_name_the_bidder() {
        let good = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![1.0, 2.0]), budget: 1.0 },
                Bidder { valuation: Valuation::additive(vec![0.5, 0.5]), budget: 2.0 },
            ],
            2,
            1,
            0.05,
        );
        assert!(validate_instance(&good).is_empty());

        let mut bad = good.clone();
        bad.bidders[1].budget = -1.0;
        let report = validate_instance(&bad);
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("bidder 1") && report[0].contains("budget"));

        let mut wrong_len = good;
        wrong_len.bidders[0].valuation = Valuation::additive(vec![1.0]);
        let report = validate_instance(&wrong_len);
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("bidder 0"));
    }

    #[test]
    fn instance_json_round_trip() {
        let g = GameInstance::new(
            vec![
                Bidder { valuation: Valuation::additive(vec![10.0, 0.0]), budget: 9.9 },
                Bidder {
                    valuation: Valuation::xos(vec![vec![10.0, 10.0], vec![5.0, 12.0]]),
                    budget: 10.0,
                },
            ],
            2,
            1,
            0.05,
        );
        let text = g.to_json();
        assert!(text.contains("\"additive\"") && text.contains("\"xos\""));
        let back = GameInstance::from_json(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn instance_json_rejects_inconsistent_n() {
        let g = GameInstance::new(
            vec![Bidder { valuation: Valuation::additive(vec![1.0]), budget: 1.0 }],
            1,
            1,
            0.05,
        );
        let text = g.to_json().replace("\"n\": 1", "\"n\": 3");
        assert!(GameInstance::from_json(&text).is_err());
    }
}
