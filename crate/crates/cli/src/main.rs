//! `lw-lab`: simulate budgeted simultaneous share auctions, verify
//! equilibria, compute optimal and equilibrium liquid welfare, and audit the
//! welfare-bound inequality chain.

use std::fs;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lwlab_cli::{
    build_family, configure_threads, emit, read_profile, run_experiment, ExperimentConfig,
    TieBreakSpec,
};
use lwlab_core::welfare::OPT_EXACT_MAX_SHARES;
use lwlab_core::*;

#[derive(Parser)]
#[command(name = "lw-lab", version, about = "Budgeted share-auction laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InstanceArg {
    /// Path to an instance JSON file
    #[arg(long)]
    instance: String,
}

#[derive(Args)]
struct GameArgs {
    #[command(flatten)]
    instance: InstanceArg,
    /// Path to a profile JSON file (pure bids, pure demands, or mixed)
    #[arg(long)]
    profile: String,
    /// Auction format: first | second | house
    #[arg(long, default_value = "first")]
    mechanism: String,
    /// Tie-breaking: lex | uniform:SEED
    #[arg(long, default_value = "lex")]
    ties: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a named instance family (instance + profile JSON)
    Gen {
        /// tightness | tightness-first | rand-tiebreak | mixed |
        /// rand-tiebreak-shares | mixed-shares | no-pne
        #[arg(long)]
        family: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Where to write the instance JSON
        #[arg(long)]
        out_instance: Option<String>,
        /// Where to write the profile JSON (generator families only)
        #[arg(long)]
        out_profile: Option<String>,
    },
    /// Verify a profile as a Nash equilibrium (exit 0 yes, 1 no, 2 error)
    Verify(GameArgs),
    /// Exact optimal liquid welfare of an instance
    Opt(InstanceArg),
    /// Fractional relaxation of the optimal liquid welfare
    Llp(InstanceArg),
    /// Ratio of optimal to equilibrium liquid welfare for a profile
    Lpoa(GameArgs),
    /// Audit the welfare-bound inequality chain at an equilibrium
    Audit {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 2.26)]
        alpha: f64,
        #[arg(long, default_value_t = 7.16)]
        gamma: f64,
    },
    /// Best-response dynamics from the zero profile
    Brd {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, default_value = "first")]
        mechanism: String,
        #[arg(long, default_value = "lex")]
        ties: String,
        #[arg(long, default_value_t = 100)]
        max_rounds: u32,
    },
    /// Run an experiment suite from a JSON config
    Suite {
        #[arg(long)]
        config: String,
    },
}

fn parse_mechanism(text: &str) -> anyhow::Result<Mechanism> {
    match text {
        "first" => Ok(Mechanism::First),
        "second" => Ok(Mechanism::Second),
        "house" => Ok(Mechanism::House),
        other => bail!("unknown mechanism {other:?}; expected first, second or house"),
    }
}

fn load_instance(path: &str) -> anyhow::Result<GameInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    Ok(GameInstance::from_json(&text)?)
}

fn load_game(args: &GameArgs) -> anyhow::Result<(GameInstance, MixedProfile, Mechanism, TieBreakRule)> {
    let game = load_instance(&args.instance.instance)?;
    let profile = read_profile(&args.profile)?;
    let mechanism = parse_mechanism(&args.mechanism)?;
    let ties = TieBreakSpec::parse(&args.ties)?.rule(game.num_bidders());
    Ok((game, profile, mechanism, ties))
}

fn opt_value(game: &GameInstance) -> anyhow::Result<(f64, &'static str)> {
    if game.total_shares() <= OPT_EXACT_MAX_SHARES {
        Ok((opt_exact(game)?.value, "exact"))
    } else {
        Ok((solve_llp(game)?.objective, "llp-bound"))
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Gen { family, epsilon, n, h, m, out_instance, out_profile } => {
            let (id, certified, plain) = build_family(&family, epsilon, n, h, m)?;
            let (instance_json, profile_json, summary) = match (&certified, &plain) {
                (Some(c), _) => (c.game.to_json(), Some(c.profile.to_json()), c.to_json()),
                (_, Some(g)) => (
                    g.to_json(),
                    None,
                    serde_json::json!({ "id": id, "game": serde_json::from_str::<serde_json::Value>(&g.to_json())? })
                        .to_string(),
                ),
                _ => unreachable!("family builders return one of the two"),
            };
            if let Some(path) = out_instance {
                fs::write(&path, &instance_json).with_context(|| format!("writing {path}"))?;
            }
            match (out_profile, profile_json) {
                (Some(path), Some(json)) => {
                    fs::write(&path, json).with_context(|| format!("writing {path}"))?
                }
                (Some(_), None) => bail!("family {family} has no candidate profile"),
                _ => {}
            }
            println!("{summary}");
            Ok(0)
        }
        Command::Verify(args) => {
            let (game, profile, mechanism, ties) = load_game(&args)?;
            let verdict =
                verify_mixed_ne(&game, mechanism, &profile, &ties, &SearchOptions::default())?;
            println!("{}", verdict.to_json());
            Ok(if verdict.is_equilibrium { 0 } else { 1 })
        }
        Command::Opt(args) => {
            let game = load_instance(&args.instance)?;
            let result = opt_exact(&game)?;
            println!("{}", result.to_json());
            Ok(0)
        }
        Command::Llp(args) => {
            let game = load_instance(&args.instance)?;
            let sol = solve_llp(&game)?;
            println!("{}", sol.to_json());
            Ok(0)
        }
        Command::Lpoa(args) => {
            let (game, profile, mechanism, ties) = load_game(&args)?;
            let opts = SearchOptions::default();
            let verdict = verify_mixed_ne(&game, mechanism, &profile, &ties, &opts)?;
            let dist = profile_outcome_distribution(&game, mechanism, &profile, &ties, &opts)?;
            let eq_lw = expected_liquid_welfare(&game, &dist)?;
            let (opt, method) = opt_value(&game)?;
            let ratio = lpoa(opt, eq_lw)?;
            println!(
                "{}",
                serde_json::json!({
                    "opt": opt,
                    "opt_method": method,
                    "eq_lw": eq_lw,
                    "lpoa": ratio,
                    "is_equilibrium": verdict.is_equilibrium,
                })
            );
            Ok(if verdict.is_equilibrium { 0 } else { 1 })
        }
        Command::Audit { game, alpha, gamma } => {
            let (instance, profile, mechanism, ties) = load_game(&game)?;
            let params = AnalysisParams::new(alpha, gamma)?;
            let report = audit_bounds(
                &instance,
                mechanism,
                &profile,
                &ties,
                &params,
                &SearchOptions::default(),
            )?;
            println!("{}", report.to_json());
            Ok(if report.all_hold() { 0 } else { 1 })
        }
        Command::Brd { instance, mechanism, ties, max_rounds } => {
            let game = load_instance(&instance.instance)?;
            let mechanism = parse_mechanism(&mechanism)?;
            let ties = TieBreakSpec::parse(&ties)?.rule(game.num_bidders());
            let initial: Vec<Action> = (0..game.num_bidders())
                .map(|_| {
                    if mechanism.uses_demands() {
                        Action::zero_demands(game.num_items)
                    } else {
                        Action::zero_bids(game.num_items, game.shares_per_item)
                    }
                })
                .collect();
            let result = best_response_dynamics(
                &game,
                mechanism,
                &ties,
                initial,
                max_rounds,
                &SearchOptions::default(),
            )?;
            let profile = MixedProfile::pure(result.profile.clone());
            println!(
                "{}",
                serde_json::json!({
                    "converged": result.converged,
                    "rounds": result.rounds,
                    "cycle_detected": result.cycle_witness.is_some(),
                    "profile": serde_json::from_str::<serde_json::Value>(&profile.to_json())?,
                })
            );
            Ok(0)
        }
        Command::Suite { config } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {config}"))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {config}"))?;
            let rows = run_experiment(&cfg)?;
            emit(&cfg, &rows)?;
            print!("{}", lwlab_cli::to_csv(&cfg, &rows));
            let any_false = rows.iter().any(|r| r.verdict == Some(false) || r.error.is_some());
            Ok(if any_false { 1 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
