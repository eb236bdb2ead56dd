//! Test-side oracles, independent of the library paths they check.

use lwlab_core::*;

/// Direct best-gain oracle: materializes the deviation space and evaluates
/// every row through the mechanism's exact outcome distribution. Avoids the
/// verifier's table-based fast paths.
pub fn oracle_best_gain(
    g: &GameInstance,
    mech: Mechanism,
    s: &MixedProfile,
    t: &TieBreakRule,
    bidder: usize,
) -> f64 {
    let opts = SearchOptions::default();
    let space = deviation_space(g, bidder, mech, &opts).unwrap();
    let rows = space.collect(5_000_000).unwrap();

    let expand = |profile: &MixedProfile| -> Vec<(Vec<Action>, f64)> {
        let mut combos: Vec<(Vec<Action>, f64)> = vec![(Vec::new(), 1.0)];
        for row in &profile.strategies {
            let mut next = Vec::new();
            for (actions, p) in &combos {
                for (a, q) in &row.support {
                    if *q <= 0.0 {
                        continue;
                    }
                    let mut actions = actions.clone();
                    actions.push(a.clone());
                    next.push((actions, p * q));
                }
            }
            combos = next;
        }
        combos
    };
    let eu = |profile: &MixedProfile| -> f64 {
        let mut total = 0.0;
        for (actions, p) in expand(profile) {
            let dist = outcome_distribution(g, mech, &actions, t, 1_000_000).unwrap();
            for (o, q) in dist {
                let u = utility(g, bidder, &o);
                if u == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                total += p * q * u;
            }
        }
        total
    };

    let current = eu(s);
    let mut best_gain = f64::NEG_INFINITY;
    for row in rows {
        let mut alt = s.clone();
        alt.strategies[bidder] = MixedRow::pure(row);
        let gain = eu(&alt) - current;
        if gain > best_gain {
            best_gain = gain;
        }
    }
    best_gain
}

#[allow(dead_code)]
pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected} (tol {tol})"
    );
}
