//! Experiment orchestration: instance suites (files, generator families,
//! seeded random draws), per-instance measurement modes, and reproducible
//! CSV/JSON emission.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lwlab_core::welfare::OPT_EXACT_MAX_SHARES;
use lwlab_core::*;

/// Valuation class drawn by the random family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValuationClass {
    Additive,
    Xos { clauses: usize },
}

/// Shape and ranges of a random instance draw. Values and budgets land on
/// the bid grid so profiles stay representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub value_range: (f64, f64),
    pub budget_range: (f64, f64),
    pub valuation: ValuationClass,
}

fn default_h() -> usize {
    1
}

fn default_epsilon() -> f64 {
    lwlab_core::game::DEFAULT_GRID_STEP
}

/// Draws a random instance on the bid grid; identical seeds give identical
/// instances.
pub fn random_instance(spec: &RandomSpec, seed: u64) -> Result<GameInstance> {
    if spec.n == 0 || spec.m == 0 || spec.h == 0 || spec.epsilon <= 0.0 {
        return Err(Error::Input("random spec needs n, m, h >= 1 and epsilon > 0".into()));
    }
    let (vlo, vhi) = spec.value_range;
    let (blo, bhi) = spec.budget_range;
    if vlo < 0.0 || vhi < vlo || blo < 0.0 || bhi < blo {
        return Err(Error::Input("random spec ranges must be nonnegative and ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = spec.epsilon;
    let mut draw = |lo: f64, hi: f64| -> f64 {
        let lo_units = (lo / step).ceil() as i64;
        let hi_units = (hi / step).floor() as i64;
        if hi_units <= lo_units {
            return lo_units.max(0) as f64 * step;
        }
        rng.gen_range(lo_units..=hi_units).max(0) as f64 * step
    };
    let bidders = (0..spec.n)
        .map(|_| {
            let valuation = match spec.valuation {
                ValuationClass::Additive => {
                    Valuation::additive((0..spec.m).map(|_| draw(vlo, vhi)).collect())
                }
                ValuationClass::Xos { clauses } => Valuation::xos(
                    (0..clauses.max(1))
                        .map(|_| (0..spec.m).map(|_| draw(vlo, vhi)).collect())
                        .collect(),
                ),
            };
            Bidder { valuation, budget: draw(blo, bhi) }
        })
        .collect();
    let g = GameInstance::new(bidders, spec.m, spec.h, step);
    let report = validate_instance(&g);
    if !report.is_empty() {
        return Err(Error::Model(report.join("; ")));
    }
    Ok(g)
}

/// Instance source inside a suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InstanceSpec {
    /// Instance (and optional profile) from JSON files.
    Files { id: String, instance: String, #[serde(default)] profile: Option<String> },
    /// A named generator family.
    Family {
        family: String,
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        h: Option<usize>,
        #[serde(default)]
        m: Option<usize>,
    },
    /// `count` seeded draws from a random spec.
    Random { count: usize, spec: RandomSpec },
}

/// What to measure per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Verify,
    Opt,
    Llp,
    Lpoa,
    Audit,
    Brd,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Verify => "verify",
            Mode::Opt => "opt",
            Mode::Llp => "llp",
            Mode::Lpoa => "lpoa",
            Mode::Audit => "audit",
            Mode::Brd => "brd",
        };
        write!(f, "{s}")
    }
}

/// A full experiment: instance sources, mechanism defaults, analysis
/// parameters, seed and output prefix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instances: Vec<InstanceSpec>,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "default_ties")]
    pub ties: TieBreakSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Output path prefix; `<prefix>.csv` and `<prefix>.json` are written.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_brd_rounds")]
    pub brd_max_rounds: u32,
}

fn default_mechanism() -> Mechanism {
    Mechanism::First
}

fn default_alpha() -> f64 {
    2.26
}

fn default_gamma() -> f64 {
    7.16
}

fn default_brd_rounds() -> u32 {
    100
}

fn default_ties() -> TieBreakSpec {
    TieBreakSpec::Lex
}

/// Tie-break selection before the bidder count is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreakSpec {
    Lex,
    Uniform { seed: u64 },
}

impl TieBreakSpec {
    pub fn rule(&self, n: usize) -> TieBreakRule {
        match self {
            TieBreakSpec::Lex => TieBreakRule::lexicographic(n),
            TieBreakSpec::Uniform { seed } => TieBreakRule::uniform(*seed),
        }
    }

    /// Parses the CLI form `lex` or `uniform:SEED`.
    pub fn parse(text: &str) -> Result<Self> {
        if text == "lex" {
            return Ok(TieBreakSpec::Lex);
        }
        if let Some(seed) = text.strip_prefix("uniform:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Input(format!("bad tie-break seed in {text:?}")))?;
            return Ok(TieBreakSpec::Uniform { seed });
        }
        Err(Error::Input(format!("tie-break {text:?}; expected lex or uniform:SEED")))
    }
}

/// One measured (instance, mode) row.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub id: String,
    pub mode: String,
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub mechanism: String,
    pub opt: Option<f64>,
    pub eq_lw: Option<f64>,
    pub lpoa: Option<f64>,
    pub verdict: Option<bool>,
    pub audit_ok: Option<bool>,
    pub error: Option<String>,
    pub wall_ms: f64,
}

/// A resolved instance ready to measure.
struct Task {
    id: String,
    game: GameInstance,
    mechanism: Mechanism,
    ties: TieBreakRule,
    profile: Option<MixedProfile>,
}

/// Builds a generator family by name.
pub fn build_family(
    family: &str,
    epsilon: Option<f64>,
    n: Option<usize>,
    h: Option<usize>,
    m: Option<usize>,
) -> Result<(String, Option<CertifiedInstance>, Option<GameInstance>)> {
    match family {
        "tightness" => {
            let eps = epsilon.unwrap_or(0.1);
            Ok((format!("tightness-{eps}"), Some(gen_tightness(eps)?), None))
        }
        "tightness-first" => {
            let eps = epsilon.unwrap_or(0.1);
            Ok((format!("tightness-first-{eps}"), Some(gen_tightness_first_price(eps)?), None))
        }
        "rand-tiebreak" => {
            let n = n.unwrap_or(4);
            Ok((format!("rand-tiebreak-{n}"), Some(gen_rand_tiebreak_lb(n)?), None))
        }
        "mixed" => {
            let n = n.unwrap_or(5);
            Ok((format!("mixed-{n}"), Some(gen_mixed_lb(n)?), None))
        }
        "rand-tiebreak-shares" => {
            let n = n.unwrap_or(6);
            let h = h.unwrap_or(2);
            Ok((
                format!("rand-tiebreak-shares-{n}-{h}"),
                Some(gen_rand_tiebreak_shares_lb(n, h)?),
                None,
            ))
        }
        "mixed-shares" => {
            let n = n.unwrap_or(7);
            let h = h.unwrap_or(2);
            Ok((format!("mixed-shares-{n}-{h}"), Some(gen_mixed_shares_lb(n, h)?), None))
        }
        "no-pne" => {
            let m = m.unwrap_or(3);
            Ok((format!("no-pne-{m}"), None, Some(gen_no_pure_ne(m)?)))
        }
        other => Err(Error::Input(format!("unknown family {other:?}"))),
    }
}

/// Reads a profile file holding pure bids, pure demands, or a mixed profile.
pub fn read_profile(path: &str) -> Result<MixedProfile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {path}: {e}")))?;
    parse_profile(&text)
}

pub fn parse_profile(text: &str) -> Result<MixedProfile> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("profile JSON: {e}")))?;
    if value.get("strategies").is_some() {
        return MixedProfile::from_json(text);
    }
    if value.get("bids").is_some() {
        let b: BidProfile = serde_json::from_value(value)
            .map_err(|e| Error::Input(format!("bid profile JSON: {e}")))?;
        return Ok(MixedProfile::from_bid_profile(&b));
    }
    if value.get("demands").is_some() {
        let d: HouseDemand = serde_json::from_value(value)
            .map_err(|e| Error::Input(format!("demand profile JSON: {e}")))?;
        return Ok(MixedProfile::pure(d.demands.into_iter().map(Action::Demands).collect()));
    }
    Err(Error::Input("profile JSON needs bids, demands, or strategies".into()))
}

fn resolve_tasks(cfg: &ExperimentConfig) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for spec in &cfg.instances {
        match spec {
            InstanceSpec::Files { id, instance, profile } => {
                let text = fs::read_to_string(instance)
                    .map_err(|e| Error::Input(format!("cannot read {instance}: {e}")))?;
                let game = GameInstance::from_json(&text)?;
                let profile = profile.as_ref().map(|p| read_profile(p)).transpose()?;
                let ties = cfg.ties.rule(game.num_bidders());
                tasks.push(Task { id: id.clone(), game, mechanism: cfg.mechanism, ties, profile });
            }
            InstanceSpec::Family { family, epsilon, n, h, m } => {
                let (id, certified, plain) = build_family(family, *epsilon, *n, *h, *m)?;
                if let Some(c) = certified {
                    tasks.push(Task {
                        id,
                        mechanism: c.mechanism,
                        ties: c.ties.clone(),
                        profile: Some(c.profile.clone()),
                        game: c.game,
                    });
                } else if let Some(game) = plain {
                    let ties = cfg.ties.rule(game.num_bidders());
                    tasks.push(Task { id, game, mechanism: cfg.mechanism, ties, profile: None });
                }
            }
            InstanceSpec::Random { count, spec } => {
                for k in 0..*count {
                    let seed = cfg.seed.wrapping_add(k as u64);
                    let game = random_instance(spec, seed)?;
                    let ties = cfg.ties.rule(game.num_bidders());
                    tasks.push(Task {
                        id: format!("random-{}x{}-s{seed}", spec.n, spec.m),
                        game,
                        mechanism: cfg.mechanism,
                        ties,
                        profile: None,
                    });
                }
            }
        }
    }
    Ok(tasks)
}

fn zero_profile(game: &GameInstance, mech: Mechanism) -> Vec<Action> {
    (0..game.num_bidders())
        .map(|_| {
            if mech.uses_demands() {
                Action::zero_demands(game.num_items)
            } else {
                Action::zero_bids(game.num_items, game.shares_per_item)
            }
        })
        .collect()
}

fn opt_value(game: &GameInstance) -> Result<(f64, &'static str)> {
    if game.total_shares() <= OPT_EXACT_MAX_SHARES {
        Ok((opt_exact(game)?.value, "exact"))
    } else {
        Ok((solve_llp(game)?.objective, "llp-bound"))
    }
}

fn measure(task: &Task, mode: Mode, cfg: &ExperimentConfig) -> ExperimentRow {
    let start = Instant::now();
    let opts = SearchOptions::default();
    let mut row = ExperimentRow {
        id: task.id.clone(),
        mode: mode.to_string(),
        n: task.game.num_bidders(),
        m: task.game.num_items,
        h: task.game.shares_per_item,
        mechanism: task.mechanism.to_string(),
        opt: None,
        eq_lw: None,
        lpoa: None,
        verdict: None,
        audit_ok: None,
        error: None,
        wall_ms: 0.0,
    };
    let result: Result<()> = (|| {
        match mode {
            Mode::Verify => {
                let profile = task.profile.as_ref().ok_or_else(|| {
                    Error::Input("verify mode needs a profile".into())
                })?;
                let v = verify_mixed_ne(&task.game, task.mechanism, profile, &task.ties, &opts)?;
                row.verdict = Some(v.is_equilibrium);
            }
            Mode::Opt => {
                let (value, _) = opt_value(&task.game)?;
                row.opt = Some(value);
            }
            Mode::Llp => {
                row.opt = Some(solve_llp(&task.game)?.objective);
            }
            Mode::Lpoa => {
                let profile = task.profile.as_ref().ok_or_else(|| {
                    Error::Input("lpoa mode needs a profile".into())
                })?;
                let v = verify_mixed_ne(&task.game, task.mechanism, profile, &task.ties, &opts)?;
                row.verdict = Some(v.is_equilibrium);
                let dist = profile_outcome_distribution(
                    &task.game,
                    task.mechanism,
                    profile,
                    &task.ties,
                    &opts,
                )?;
                let eq_lw = expected_liquid_welfare(&task.game, &dist)?;
                let (opt, _) = opt_value(&task.game)?;
                row.opt = Some(opt);
                row.eq_lw = Some(eq_lw);
                row.lpoa = Some(lpoa(opt, eq_lw)?);
            }
            Mode::Audit => {
                let profile = task.profile.as_ref().ok_or_else(|| {
                    Error::Input("audit mode needs a profile".into())
                })?;
                let params = AnalysisParams::new(cfg.alpha, cfg.gamma)?;
                let report =
                    audit_bounds(&task.game, task.mechanism, profile, &task.ties, &params, &opts)?;
                row.audit_ok = Some(report.all_hold());
            }
            Mode::Brd => {
                let initial = zero_profile(&task.game, task.mechanism);
                let brd = best_response_dynamics(
                    &task.game,
                    task.mechanism,
                    &task.ties,
                    initial,
                    cfg.brd_max_rounds,
                    &opts,
                )?;
                row.verdict = Some(brd.converged);
                if brd.converged {
                    let profile = MixedProfile::pure(brd.profile);
                    let dist = profile_outcome_distribution(
                        &task.game,
                        task.mechanism,
                        &profile,
                        &task.ties,
                        &opts,
                    )?;
                    let eq_lw = expected_liquid_welfare(&task.game, &dist)?;
                    let (opt, _) = opt_value(&task.game)?;
                    row.opt = Some(opt);
                    row.eq_lw = Some(eq_lw);
                    if eq_lw > TOL {
                        row.lpoa = Some(lpoa(opt, eq_lw)?);
                    }
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    row
}

/// Runs every (instance, mode) pair. Rows come back ordered by instance then
/// mode regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let tasks = resolve_tasks(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..cfg.modes.len()).map(move |m| (t, m)))
        .collect();
    let rows: Vec<((usize, usize), ExperimentRow)> = jobs
        .par_iter()
        .map(|&(t, m)| ((t, m), measure(&tasks[t], cfg.modes[m], cfg)))
        .collect();
    let mut rows = rows;
    rows.sort_by_key(|(k, _)| *k);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

fn fmt_opt_bool(v: Option<bool>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Run manifest embedded in the outputs for provenance.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    mechanism: String,
    alpha: f64,
    gamma: f64,
    modes: &'a [Mode],
}

fn manifest(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(&Manifest {
        tool: "lw-lab",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        mechanism: cfg.mechanism.to_string(),
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        modes: &cfg.modes,
    })
    .expect("manifest serializes")
}

/// Renders rows as CSV with the manifest as a leading comment line and
/// 9-decimal fixed formatting.
pub fn to_csv(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# manifest: {}\n", manifest(cfg)));
    out.push_str("id,mode,n,m,h,mechanism,opt,eq_lw,lpoa,verdict,audit_ok,error,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}\n",
            r.id,
            r.mode,
            r.n,
            r.m,
            r.h,
            r.mechanism,
            fmt_opt_f64(r.opt),
            fmt_opt_f64(r.eq_lw),
            fmt_opt_f64(r.lpoa),
            fmt_opt_bool(r.verdict),
            fmt_opt_bool(r.audit_ok),
            r.error.clone().map(|e| e.replace(',', ";")).unwrap_or_default(),
            r.wall_ms,
        ));
    }
    out
}

pub fn to_json(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        manifest: serde_json::Value,
        rows: &'a [ExperimentRow],
    }
    serde_json::to_string_pretty(&Doc {
        manifest: serde_json::from_str(&manifest(cfg)).expect("valid manifest"),
        rows,
    })
    .expect("rows serialize")
}

/// Writes `<prefix>.csv` and `<prefix>.json`.
pub fn emit(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> Result<()> {
    let Some(prefix) = &cfg.output else {
        return Ok(());
    };
    if let Some(parent) = Path::new(prefix).parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::Input(format!("cannot create {parent:?}: {e}")))?;
        }
    }
    fs::write(format!("{prefix}.csv"), to_csv(cfg, rows))
        .map_err(|e| Error::Input(format!("cannot write CSV: {e}")))?;
    fs::write(format!("{prefix}.json"), to_json(cfg, rows))
        .map_err(|e| Error::Input(format!("cannot write JSON: {e}")))?;
    Ok(())
}

/// Applies the `LW_LAB_THREADS` cap when set; call once at startup.
pub fn configure_threads() {
    if let Ok(text) = std::env::var("LW_LAB_THREADS") {
        if let Ok(k) = text.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_instances_are_seed_deterministic() {
        let spec = RandomSpec {
            n: 2,
            m: 2,
            h: 1,
            epsilon: 0.05,
            value_range: (0.0, 3.0),
            budget_range: (0.5, 2.0),
            valuation: ValuationClass::Additive,
        };
        let a = random_instance(&spec, 7).unwrap();
        let b = random_instance(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = random_instance(&spec, 8).unwrap();
        assert_ne!(a, c);
        assert!(validate_instance(&a).is_empty());
    }

    #[test]
    fn xos_single_clause_behaves_additively() {
        let spec = RandomSpec {
            n: 2,
            m: 2,
            h: 1,
            epsilon: 0.05,
            value_range: (0.0, 2.0),
            budget_range: (1.0, 2.0),
            valuation: ValuationClass::Xos { clauses: 1 },
        };
        let g = random_instance(&spec, 3).unwrap();
        for bidder in &g.bidders {
            let Valuation::Xos { clauses } = &bidder.valuation else { panic!("expected XOS") };
            assert_eq!(clauses.len(), 1);
            let additive = Valuation::additive(clauses[0].clone());
            let bundle = ShareBundle { counts: vec![1, 0] };
            assert!(
                (bidder.valuation.value(&bundle, 1).unwrap()
                    - additive.value(&bundle, 1).unwrap())
                .abs()
                    <= TOL
            );
        }
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let spec = RandomSpec {
            n: 1,
            m: 1,
            h: 1,
            epsilon: 0.05,
            value_range: (2.0, 1.0),
            budget_range: (0.0, 1.0),
            valuation: ValuationClass::Additive,
        };
        assert!(random_instance(&spec, 1).is_err());
    }

    #[test]
    fn tie_break_spec_parses() {
        assert_eq!(TieBreakSpec::parse("lex").unwrap(), TieBreakSpec::Lex);
        assert_eq!(
            TieBreakSpec::parse("uniform:9").unwrap(),
            TieBreakSpec::Uniform { seed: 9 }
        );
        assert!(TieBreakSpec::parse("coin").is_err());
    }

    #[test]
    fn empty_suite_emits_header_only() {
        let cfg = ExperimentConfig {
            instances: vec![],
            mechanism: Mechanism::First,
            ties: TieBreakSpec::Lex,
            alpha: 2.26,
            gamma: 7.16,
            seed: 0,
            modes: vec![Mode::Verify],
            output: None,
            brd_max_rounds: 10,
        };
        let rows = run_experiment(&cfg).unwrap();
        assert!(rows.is_empty());
        let csv = to_csv(&cfg, &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# manifest:"));
        assert!(lines[1].starts_with("id,mode"));
    }
}
