//! Named instance families with candidate equilibrium profiles and claimed
//! optimal / equilibrium welfare certificates. Each generator's profile is
//! meant to pass the matching verifier and hit the claimed values exactly;
//! the acceptance suite measures both.

use serde::Serialize;

use crate::equilibrium::{MixedProfile, MixedRow};
use crate::error::{Error, Result};
use crate::game::{Bidder, GameInstance, Valuation};
use crate::mechanisms::{Action, Demand, Mechanism, TieBreakRule};

/// A generated instance bundled with its candidate equilibrium and claimed
/// welfare values.
#[derive(Debug, Clone)]
pub struct CertifiedInstance {
    pub game: GameInstance,
    pub mechanism: Mechanism,
    pub ties: TieBreakRule,
    pub profile: MixedProfile,
    pub claimed_opt: f64,
    pub claimed_eq_lw: f64,
    pub source: String,
}

impl CertifiedInstance {
    fn new(
        game: GameInstance,
        mechanism: Mechanism,
        ties: TieBreakRule,
        profile: MixedProfile,
        claimed_opt: f64,
        claimed_eq_lw: f64,
        source: &str,
    ) -> Self {
        assert!(
            claimed_eq_lw > 0.0 && claimed_opt >= claimed_eq_lw,
            "certificate needs opt >= eq_lw > 0"
        );
        CertifiedInstance {
            game,
            mechanism,
            ties,
            profile,
            claimed_opt,
            claimed_eq_lw,
            source: source.to_string(),
        }
    }

    pub fn claimed_lpoa(&self) -> f64 {
        self.claimed_opt / self.claimed_eq_lw
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            game: serde_json::Value,
            mechanism: Mechanism,
            ties: &'a TieBreakRule,
            profile: serde_json::Value,
            claimed_opt: f64,
            claimed_eq_lw: f64,
            source: &'a str,
        }
        let doc = Doc {
            game: serde_json::from_str(&self.game.to_json()).expect("valid json"),
            mechanism: self.mechanism,
            ties: &self.ties,
            profile: serde_json::from_str(&self.profile.to_json()).expect("valid json"),
            claimed_opt: self.claimed_opt,
            claimed_eq_lw: self.claimed_eq_lw,
            source: &self.source,
        };
        serde_json::to_string_pretty(&doc).expect("certificate serializes")
    }
}

fn additive_bidder(values: Vec<f64>, budget: f64) -> Bidder {
    Bidder { valuation: Valuation::additive(values), budget }
}

fn bid_action(m: usize, entries: &[(usize, f64)]) -> Action {
    let mut row = vec![vec![0.0]; m];
    for &(j, b) in entries {
        row[j][0] = b;
    }
    Action::Bids(row)
}

fn demand_action(m: usize, entries: &[(usize, u32, f64)]) -> Action {
    let mut row = vec![Demand::none(); m];
    for &(j, count, price) in entries {
        row[j] = Demand { count, price };
    }
    Action::Demands(row)
}

/// Two bidders, two items: the budget-capped bidder is priced out and one
/// bidder takes everything, pushing the welfare ratio toward 2. Second-price
/// variant; the profile is a pure equilibrium under lexicographic ties.
pub fn gen_tightness(epsilon: f64) -> Result<CertifiedInstance> {
    tightness(epsilon, Mechanism::Second)
}

/// First-price variant: the loser bids their budget on item 1 so the winner's
/// bids sit one grid step above what can be countered.
pub fn gen_tightness_first_price(epsilon: f64) -> Result<CertifiedInstance> {
    tightness(epsilon, Mechanism::First)
}

fn tightness(epsilon: f64, mechanism: Mechanism) -> Result<CertifiedInstance> {
    if !(epsilon > 0.0 && epsilon < 10.0) {
        return Err(Error::Input(format!("epsilon {epsilon} outside (0, 10)")));
    }
    let step = epsilon / 2.0;
    let game = GameInstance::new(
        vec![
            additive_bidder(vec![10.0, 0.0], 10.0 - epsilon),
            additive_bidder(vec![10.0, 10.0], 10.0),
        ],
        2,
        1,
        step,
    );
    let profile = match mechanism {
        Mechanism::Second => MixedProfile::pure(vec![
            bid_action(2, &[]),
            bid_action(2, &[(0, 10.0 - epsilon / 2.0), (1, epsilon / 2.0)]),
        ]),
        Mechanism::First => MixedProfile::pure(vec![
            bid_action(2, &[(0, 10.0 - epsilon)]),
            bid_action(2, &[(0, 10.0 - epsilon + step), (1, step)]),
        ]),
        Mechanism::House => return Err(Error::Input("tightness pair is a bid-model family".into())),
    };
    Ok(CertifiedInstance::new(
        game,
        mechanism,
        TieBreakRule::lexicographic(2),
        profile,
        20.0 - epsilon,
        10.0,
        "tightness pair: one bidder priced out by a budget gap",
    ))
}

/// `n` bidders and items, one jackpot item everyone stampedes under uniform
/// tie-breaking: welfare collapses to a single budget.
pub fn gen_rand_tiebreak_lb(n: usize) -> Result<CertifiedInstance> {
    if n < 2 {
        return Err(Error::Input("need at least two bidders".into()));
    }
    let jackpot = (n as f64).powi(4);
    let mut values = vec![1.0; n];
    values[0] = jackpot;
    let game = GameInstance::new(
        (0..n).map(|_| additive_bidder(values.clone(), 1.0)).collect(),
        n,
        1,
        0.05,
    );
    let profile =
        MixedProfile::pure((0..n).map(|_| bid_action(n, &[(0, 1.0)])).collect());
    Ok(CertifiedInstance::new(
        game,
        Mechanism::First,
        TieBreakRule::uniform(0),
        profile,
        n as f64,
        1.0,
        "uniform-tie stampede on one jackpot item",
    ))
}

const MIXED_MAX_N: usize = 8;

/// Deterministic ties, mixed strategies: two jackpot items, lexicographically
/// dominated bidders camp on them while the rest mix, so only two bidders
/// ever win.
pub fn gen_mixed_lb(n: usize) -> Result<CertifiedInstance> {
    if !(5..=MIXED_MAX_N).contains(&n) {
        return Err(Error::Input(format!(
            "mixed lower bound needs 5 <= n <= {MIXED_MAX_N} (values 4^n must stay exact)"
        )));
    }
    let jackpot = 4f64.powi(n as i32);
    let game = GameInstance::new(
        (0..n)
            .map(|i| {
                let mut values = vec![0.0; n];
                values[0] = jackpot;
                values[1] = jackpot;
                if i <= n - 3 {
                    for v in values.iter_mut().skip(2) {
                        *v = 1.0;
                    }
                }
                additive_bidder(values, 1.0)
            })
            .collect(),
        n,
        1,
        0.05,
    );
    let mut strategies = Vec::with_capacity(n);
    for i in 0..n {
        let on_first = bid_action(n, &[(0, 1.0)]);
        let on_second = bid_action(n, &[(1, 1.0)]);
        // indices n-1, n-3 camp on item 0; n-2, n-4 camp on item 1;
        // everyone below mixes half-half
        let row = if i == n - 1 || i == n - 3 {
            MixedRow::pure(on_first)
        } else if i == n - 2 || i == n - 4 {
            MixedRow::pure(on_second)
        } else {
            MixedRow { support: vec![(on_first, 0.5), (on_second, 0.5)] }
        };
        strategies.push(row);
    }
    Ok(CertifiedInstance::new(
        game,
        Mechanism::First,
        TieBreakRule::lexicographic(n),
        MixedProfile { strategies },
        n as f64,
        2.0,
        "mixed stampede on two jackpot items under lexicographic ties",
    ))
}

/// Share version of the uniform-tie stampede: everyone demands one share of
/// the jackpot item, so at most `h` budgets are realized.
pub fn gen_rand_tiebreak_shares_lb(n: usize, h: usize) -> Result<CertifiedInstance> {
    if n < 2 || h < 1 {
        return Err(Error::Input("need n >= 2 bidders and h >= 1 shares".into()));
    }
    if n < h + 1 {
        return Err(Error::Input(
            "need n > h so the stock stays contested when one bidder drops out".into(),
        ));
    }
    let jackpot = (n as f64).powi(4);
    let mut values = vec![1.0; n];
    values[0] = jackpot;
    let game = GameInstance::new(
        (0..n).map(|_| additive_bidder(values.clone(), 1.0)).collect(),
        n,
        h,
        0.05,
    );
    let profile =
        MixedProfile::pure((0..n).map(|_| demand_action(n, &[(0, 1, 1.0)])).collect());
    Ok(CertifiedInstance::new(
        game,
        Mechanism::House,
        TieBreakRule::uniform(0),
        profile,
        n as f64,
        h as f64,
        "share-model stampede under uniform ties",
    ))
}

/// Share version of the mixed stampede: `h + 1` bidders camp on one share of
/// each jackpot item; only `2h` shares are ever sold.
pub fn gen_mixed_shares_lb(n: usize, h: usize) -> Result<CertifiedInstance> {
    if h < 1 || n < 2 * h + 3 {
        return Err(Error::Input("mixed share bound needs n >= 2h + 3".into()));
    }
    if n > MIXED_MAX_N {
        return Err(Error::Input(format!(
            "mixed share bound needs n <= {MIXED_MAX_N} (values 4^n must stay exact)"
        )));
    }
    let jackpot = 4f64.powi(n as i32);
    let game = GameInstance::new(
        (0..n)
            .map(|i| {
                let mut values = vec![0.0; n];
                values[0] = jackpot;
                values[1] = jackpot;
                if i <= n - 3 {
                    for v in values.iter_mut().skip(2) {
                        *v = 1.0;
                    }
                }
                additive_bidder(values, 1.0)
            })
            .collect(),
        n,
        h,
        0.05,
    );
    let on_first = demand_action(n, &[(0, 1, 1.0)]);
    let on_second = demand_action(n, &[(1, 1, 1.0)]);
    // top 2h+2 indices alternate between the jackpot items, the rest mix
    let camps_first: Vec<usize> = (0..=h).map(|k| n - 1 - 2 * k).collect();
    let camps_second: Vec<usize> = (0..=h).map(|k| n - 2 - 2 * k).collect();
    let mut strategies = Vec::with_capacity(n);
    for i in 0..n {
        let row = if camps_first.contains(&i) {
            MixedRow::pure(on_first.clone())
        } else if camps_second.contains(&i) {
            MixedRow::pure(on_second.clone())
        } else {
            MixedRow { support: vec![(on_first.clone(), 0.5), (on_second.clone(), 0.5)] }
        };
        strategies.push(row);
    }
    Ok(CertifiedInstance::new(
        game,
        Mechanism::House,
        TieBreakRule::lexicographic(n),
        MixedProfile { strategies },
        n as f64,
        2.0 * h as f64,
        "share-model mixed stampede under lexicographic ties",
    ))
}

/// Two bidders over `m` identical items where the richer bidder can always
/// outbid the poorer one somewhere: no pure equilibrium exists (first or
/// second price) over the budget-feasible grid.
pub fn gen_no_pure_ne(m: usize) -> Result<GameInstance> {
    if m < 2 {
        return Err(Error::Input(
            "need m >= 2 so the rich bidder cannot cover every item at full strength".into(),
        ));
    }
    Ok(GameInstance::new(
        vec![
            additive_bidder(vec![1.0; m], 1.0),
            additive_bidder(vec![1.1; m], 1.1),
        ],
        m,
        1,
        0.05,
    ))
}
