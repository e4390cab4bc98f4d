use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advpol::eval::{evaluate, summarize, verify_bounds, write_bound_reports, BoundSweep};
use advpol::plot::emit_plots;
use advpol::policy::ObservationMask;
use advpol::trainer::{self, load_attacker, load_policy, Mode, TrainConfig};
use advpol::{make_env, EnvSpec};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

/// Adversarial policy training with a victim imitator on small Markov games.
#[derive(Debug, Parser)]
#[command(name = "advpol", version)]
struct Cli {
    /// Rollout threads (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain a victim by self-play; also saves the self-play opponent as a baseline adversary.
    MakeVictim(RunArgs),
    /// Train an adversary against a fixed victim.
    Train(TrainArgs),
    /// Retrain a victim against a mixture of a trained and a baseline adversary.
    RetrainVictim(RetrainArgs),
    /// Win/tie evaluation of an adversary against a victim.
    Evaluate(EvalArgs),
    /// Check the sensitivity and robustness bounds on random policies.
    VerifyBounds(BoundsArgs),
    /// Render learning curves from a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Environment name (markov_rps, grid_pass, push_duel).
    #[arg(long)]
    env: Option<String>,
    /// Step budget of this command.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Victim checkpoint.
    #[arg(long)]
    victim: Option<PathBuf>,
    /// Enhanced imitator and differentiated adversary reward.
    #[arg(long, overrides_with = "no_enhanced")]
    enhanced: bool,
    #[arg(long)]
    no_enhanced: bool,
    /// Train without an imitator.
    #[arg(long)]
    no_imitator: bool,
    /// Resume from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    victim: Option<PathBuf>,
    /// Trained adversary (training checkpoint or adversary file).
    #[arg(long)]
    new_adv: Option<PathBuf>,
    /// Baseline adversary.
    #[arg(long)]
    base_adv: Option<PathBuf>,
    /// Probability of facing the trained adversary in an episode.
    #[arg(long)]
    mix_p: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Adversary (training checkpoint or adversary file).
    #[arg(long)]
    adv: PathBuf,
    /// Victim checkpoint.
    #[arg(long)]
    vic: PathBuf,
    /// Environment name. Defaults to the env in `--config`, or in the
    /// config.json next to the adversary checkpoint.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hide the victim's coordinates from the adversary.
    #[arg(long)]
    blind: bool,
    /// Drop the imitator's predictions.
    #[arg(long)]
    no_imitator: bool,
    /// Directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long, default_value = "markov_rps")]
    env: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON sweep sizes; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "bounds")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics CSV written by a run.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn base_config(run: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &run.config {
        Some(path) => TrainConfig::from_json_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(name) = &run.env {
        if &cfg.env.name != name {
            cfg.env = EnvSpec::named(name);
        }
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &run.out {
        cfg.output_dir = Some(out.clone());
    }
    if cfg.output_dir.is_none() {
        bail!(advpol::Error::Config(
            "an output directory is required (--out or output_dir)".into()
        ));
    }
    Ok(cfg)
}

fn finish_config(cfg: TrainConfig) -> Result<TrainConfig> {
    let cfg = cfg.resolved()?;
    info!("resolved config: {}", serde_json::to_string(&cfg)?);
    Ok(cfg)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| advpol::Error::Config(format!("{what} checkpoint not given")).into())
}

fn make_victim(args: RunArgs) -> Result<()> {
    let mut cfg = base_config(&args)?;
    if let Some(steps) = args.steps {
        cfg.pretrain_steps = steps;
    }
    let cfg = finish_config(cfg)?;
    let run = trainer::make_victim(&cfg)?;
    let dir = cfg.output_dir.as_deref().expect("checked above");
    println!("victim: {}", dir.join("victim.json").display());
    println!(
        "baseline adversary: {}",
        dir.join("base_adversary.json").display()
    );
    if let Some(last) = run.metrics.last() {
        println!("final self-play adversary win rate {:.4}", last.win_rate);
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.run)?;
    if let Some(steps) = args.run.steps {
        cfg.total_steps = steps;
    }
    if args.enhanced {
        cfg.enhanced = true;
    }
    if args.no_enhanced {
        cfg.enhanced = false;
    }
    if args.no_imitator {
        cfg.mode = Mode::AblationNoImitator;
    }
    if let Some(v) = args.victim {
        cfg.victim = Some(v);
    }
    let cfg = finish_config(cfg)?;
    let victim = load_policy(&required(cfg.victim.clone(), "victim")?)?;
    let run = match &args.resume {
        Some(ckpt) => trainer::resume_apil(&cfg, &victim, ckpt)?,
        None => trainer::train_apil(&cfg, &victim)?,
    };
    let dir = cfg.output_dir.as_deref().expect("checked above");
    println!(
        "trained to step {}; checkpoint {}",
        run.state.step,
        dir.join(format!("ckpt_{}.json", run.state.step)).display()
    );
    if let Some(last) = run.metrics.last() {
        println!(
            "last cycle: win {:.4} tie {:.4} imitation gap {:.4}",
            last.win_rate, last.tie_rate, last.imitation_gap
        );
    }
    Ok(())
}

fn retrain(args: RetrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.run)?;
    cfg.mode = Mode::RetrainVictim;
    if let Some(steps) = args.run.steps {
        cfg.retrain_steps = steps;
    }
    if let Some(p) = args.mix_p {
        cfg.mix_p = p;
    }
    cfg.victim = args.victim.or(cfg.victim);
    cfg.new_adversary = args.new_adv.or(cfg.new_adversary);
    cfg.base_adversary = args.base_adv.or(cfg.base_adversary);
    let cfg = finish_config(cfg)?;
    let victim = load_policy(&required(cfg.victim.clone(), "victim")?)?;
    let new = load_attacker(&required(cfg.new_adversary.clone(), "trained adversary")?)?;
    let base = load_attacker(&required(cfg.base_adversary.clone(), "baseline adversary")?)?;
    let run = trainer::retrain_victim(&cfg, &victim, &new, &base)?;
    let r = &run.report;
    println!(
        "victim win+tie vs trained adversary: {:.4} -> {:.4}",
        r.before.vs_new.victim_win_tie_rate(),
        r.after.vs_new.victim_win_tie_rate()
    );
    println!(
        "victim win+tie vs baseline adversary: {:.4} -> {:.4}",
        r.before.vs_base.victim_win_tie_rate(),
        r.after.vs_base.victim_win_tie_rate()
    );
    Ok(())
}

fn eval_env(args: &EvalArgs) -> Result<EnvSpec> {
    if let Some(name) = &args.env {
        return Ok(EnvSpec::named(name));
    }
    if let Some(path) = &args.config {
        return Ok(TrainConfig::from_json_file(path)?.env);
    }
    let sibling = args
        .adv
        .parent()
        .unwrap_or(Path::new("."))
        .join("config.json");
    if sibling.exists() {
        return Ok(TrainConfig::from_json_file(&sibling)?.env);
    }
    bail!(advpol::Error::Config(format!(
        "no environment given and no config.json next to {}; pass --env",
        args.adv.display()
    )))
}

fn eval(args: EvalArgs) -> Result<()> {
    let game = make_env(&eval_env(&args)?)?;
    let attacker = load_attacker(&args.adv)?;
    let victim = load_policy(&args.vic)?;
    let mut agent = attacker.agent();
    if args.no_imitator {
        agent = agent.unfed();
    }
    let mask = if args.blind {
        Some(ObservationMask::victim_block(&game, agent.policy.layout())?)
    } else {
        None
    };
    if let Some(mask) = &mask {
        agent = agent.blinded(mask);
    }
    let report = evaluate(&game, &agent, &victim, args.episodes, args.seed)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let sweep = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                advpol::Error::Config(format!("cannot read sweep config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<BoundSweep>(&text).map_err(|e| {
                advpol::Error::Config(format!("invalid sweep config {}: {e}", path.display()))
            })?
        }
        None => BoundSweep::default(),
    };
    let game = make_env(&EnvSpec::named(&args.env))?;
    info!("sweep: {}", serde_json::to_string(&sweep)?);
    let reports = verify_bounds(&game, &sweep, args.seed)?;
    write_bound_reports(&args.out, &reports)?;
    let mut failures = 0;
    println!("check\tcount\tpassed\tfailed\tmin_margin");
    for row in summarize(&reports) {
        println!(
            "{}\t{}\t{}\t{}\t{:e}",
            row.check_name, row.count, row.passed, row.failed, row.min_margin
        );
        if row.check_name != "sensitivity_path" {
            failures += row.failed;
        }
    }
    if failures > 0 {
        warn!(
            "{failures} bound checks failed; see {}",
            args.out.join("bounds.jsonl").display()
        );
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    for path in emit_plots(&args.metrics, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(advpol::Error::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::MakeVictim(a) => make_victim(a),
        Command::Train(a) => train(a),
        Command::RetrainVictim(a) => retrain(a),
        Command::Evaluate(a) => eval(a),
        Command::VerifyBounds(a) => bounds(a),
        Command::Plot(a) => plot(a),
    }
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<advpol::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADVPOL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
