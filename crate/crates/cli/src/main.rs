//! Command-line harness: scenario simulation, agent training, evaluation,
//! and policy comparison, with CSV artifacts written into per-run
//! directories that embed their own configuration snapshot.

use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wildgrid_core::config::RunConfig;
use wildgrid_core::ddpg::{
    evaluate, resume_train_loop, ActionDecoder, ActorPolicy, EpisodeStats, Policy, TrainerState,
};
use wildgrid_core::env::{DoneReason, Env, EnvState};
use wildgrid_core::neural::Mlp;
use wildgrid_core::policies::{baseline_policy, make_decoder, ControlMode};
use wildgrid_core::report::{self, TraceRow};
use wildgrid_core::seeds;
use wildgrid_core::Real;

#[derive(Parser)]
#[command(
    name = "wildgrid",
    version,
    about = "Wildfire / power-grid co-simulation testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; each overrides the corresponding
/// configuration field when present.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file (TOML); protocol defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin case name (toy3, rts24, rts24-strict) or a case file path.
    #[arg(long)]
    case: Option<String>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for this run's artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fire source mode: fixed or random.
    #[arg(long)]
    source: Option<String>,
    /// Proximity trip distance in grid cells.
    #[arg(long)]
    beta: Option<Real>,
    /// Generator group count for partial control.
    #[arg(long)]
    groups: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write a per-step trace CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Control policy: reactive, myopic, proactive-full, proactive-partial.
        #[arg(long)]
        policy: Option<String>,
        /// Actor checkpoint for proactive policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a proactive agent; writes checkpoints and a training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Control policy: proactive-full or proactive-partial.
        #[arg(long)]
        policy: Option<String>,
        /// Total episode count (resuming runs continue up to this).
        #[arg(long)]
        episodes: Option<u32>,
        /// Start over even if the output directory holds a trainer snapshot.
        #[arg(long)]
        fresh: bool,
    },
    /// Evaluate one policy over many episodes; writes a results CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Control policy: reactive, myopic, proactive-full, proactive-partial.
        #[arg(long)]
        policy: Option<String>,
        /// Actor checkpoint for proactive policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episode count.
        #[arg(long, default_value_t = 100)]
        episodes: u32,
        /// Worker threads for parallel episodes.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate several policies on the same episodes; writes a summary
    /// table and per-component histograms.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Policy to include (repeat the flag for each).
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// Actor checkpoints, consumed in order by the proactive policies.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Episode count per policy.
        #[arg(long, default_value_t = 100)]
        episodes: u32,
        /// Worker threads for parallel episodes.
        #[arg(long)]
        workers: Option<usize>,
        /// Histogram bin count.
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, policy, checkpoint } => {
            let cfg = assemble_config(&common, policy.as_deref())?;
            cmd_simulate(&cfg, checkpoint.as_deref())
        }
        Command::Train { common, policy, episodes, fresh } => {
            let mut cfg = assemble_config(&common, policy.as_deref())?;
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            cmd_train(&cfg, fresh)
        }
        Command::Evaluate { common, policy, checkpoint, episodes, workers } => {
            let mut cfg = assemble_config(&common, policy.as_deref())?;
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            cmd_evaluate(&cfg, checkpoint.as_deref(), episodes)
        }
        Command::Compare { common, policies, checkpoints, episodes, workers, bins } => {
            let mut cfg = assemble_config(&common, None)?;
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            cmd_compare(&cfg, &policies, &checkpoints, episodes, bins)
        }
    }
}

/// Loads the configuration file (or defaults) and applies flag overrides.
fn assemble_config(common: &Common, policy: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(case) = &common.case {
        cfg.case = case.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(source) = &common.source {
        cfg.fire.source = source.clone();
    }
    if let Some(beta) = common.beta {
        cfg.trip_distance = beta;
    }
    if let Some(groups) = common.groups {
        cfg.gen_groups = groups;
    }
    if let Some(p) = policy {
        cfg.policy = p.to_string();
    }
    Ok(cfg)
}

/// Builds the environment and materializes the run directory with its
/// configuration snapshot.
fn prepare_run(cfg: &RunConfig) -> Result<(Env, PathBuf)> {
    let net = cfg.network().context("loading case")?;
    let layout = cfg.geo_layout().context("loading layout")?;
    let scenario = cfg.scenario().context("building scenario")?;
    let env = Env::new(net, layout, scenario).context("constructing environment")?;
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).context("writing config snapshot")?;
    Ok((env, dir))
}

/// Seed list for an evaluation of `n` episodes under this master seed; the
/// same list the training loop uses for its periodic evaluation rounds.
fn eval_seeds(master: u64, n: u32) -> Vec<u64> {
    (0..n).map(|i| seeds::substream(master, "eval-episode", u64::from(i))).collect()
}

/// Loads an actor checkpoint and checks it against the environment and
/// decoder dimensions.
fn load_actor(path: &Path, env: &Env, decoder: &dyn ActionDecoder) -> Result<Mlp> {
    let mut file = fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?;
    let actor = Mlp::load(&mut file)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    if actor.input_dim() != env.observation_len() || actor.output_dim() != decoder.action_dim() {
        bail!(
            "checkpoint {} maps {} -> {} but this scenario needs {} -> {}",
            path.display(),
            actor.input_dim(),
            actor.output_dim(),
            env.observation_len(),
            decoder.action_dim(),
        );
    }
    Ok(actor)
}

/// The pieces a learned policy needs; owning them lets evaluation closures
/// hand out fresh [`ActorPolicy`] values per worker.
struct LoadedAgent {
    actor: Mlp,
    decoder: Box<dyn ActionDecoder>,
}

/// Resolves a policy name into either a baseline or a loaded agent.
fn resolve_policy(
    cfg: &RunConfig,
    mode: ControlMode,
    env: &Env,
    checkpoint: Option<&Path>,
) -> Result<Option<LoadedAgent>> {
    if !mode.is_learned() {
        return Ok(None);
    }
    let decoder = make_decoder(mode, &env.net, cfg.trip_distance, cfg.gen_groups)
        .expect("learned modes always have a decoder");
    let path = checkpoint
        .with_context(|| format!("policy '{}' needs --checkpoint", mode.name()))?;
    let actor = load_actor(path, env, decoder.as_ref())?;
    Ok(Some(LoadedAgent { actor, decoder }))
}

fn policy_factory<'a>(
    cfg: &RunConfig,
    mode: ControlMode,
    agent: &'a Option<LoadedAgent>,
) -> impl Fn() -> Box<dyn Policy + 'a> + Sync + use<'a> {
    let trip = cfg.trip_distance;
    move || match agent {
        Some(a) => {
            Box::new(ActorPolicy { actor: &a.actor, decoder: a.decoder.as_ref() }) as Box<dyn Policy>
        }
        None => baseline_policy(mode, trip).expect("baseline modes construct directly"),
    }
}

fn cmd_simulate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (env, dir) = prepare_run(cfg)?;
    let mode = cfg.control_mode().map_err(anyhow::Error::msg)?;
    let agent = resolve_policy(cfg, mode, &env, checkpoint)?;
    let mut policy = policy_factory(cfg, mode, &agent)();

    let seed = seeds::substream(cfg.seed, "trace-episode", 0);
    let mut st = env.reset(seed);
    let mut rows = Vec::new();
    while !st.done {
        let action = policy.act(&env, &st);
        let (_, reward, _) = env.step(&mut st, &action)?;
        rows.push(trace_row(&env, &st, reward.total, [
            reward.r1_load_loss,
            reward.r2_piaw,
            reward.r3_adiw,
            reward.r4_nonconv,
        ]));
    }
    fs::write(dir.join("trace.csv"), report::trace_csv(&rows))?;
    let penalty: Real = rows.iter().map(|r| r.reward_total).sum();
    println!(
        "{} episode: {} steps, total penalty {penalty}, ended by {}",
        mode.name(),
        st.step,
        match st.done_reason {
            DoneReason::NonConvergence => "non-convergence",
            _ => "horizon",
        }
    );
    println!("trace written to {}", dir.join("trace.csv").display());
    Ok(())
}

fn trace_row(env: &Env, st: &EnvState, total: Real, r: [Real; 4]) -> TraceRow {
    let burning = st.fire.cells().iter().filter(|c| c.ignited).count();
    let burned_out = st.fire.cells().iter().filter(|c| !c.burnable).count();
    let p = &st.power;
    let generation: Real = p.gen_output.iter().sum();
    let mut unserved = 0.0;
    for (i, node) in env.net.nodes.iter().enumerate() {
        let dark = if p.node_on[i] { 0.0 } else { node.load_mw };
        unserved += dark + p.shed_critical[i] + p.shed_noncritical[i];
    }
    TraceRow {
        step: st.step,
        burning_cells: burning,
        burned_out_cells: burned_out,
        nodes_on: p.node_on.iter().filter(|&&b| b).count(),
        branches_on: p.branch_on.iter().filter(|&&b| b).count(),
        gens_on: p.gen_on.iter().filter(|&&b| b).count(),
        generation_mw: generation,
        unserved_mw: unserved,
        reward_total: total,
        load_loss: r[0],
        active_line_removal: r[1],
        wildfire: r[2],
        non_convergence: r[3],
        done_reason: st.done_reason,
    }
}

/// Renders the periodic evaluation rounds of a training run.
fn rounds_csv(rounds: &[wildgrid_core::ddpg::EvalRound]) -> String {
    let mut out = String::from("schema,wildgrid-rounds-v1\nafter_episode,mean_penalty,pct_sim_ending\n");
    for r in rounds {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.after_episode,
            r.mean_penalty,
            report::pct_sim_ending(&r.episodes)
        );
    }
    out
}

fn cmd_train(cfg: &RunConfig, fresh: bool) -> Result<()> {
    let (env, dir) = prepare_run(cfg)?;
    let mode = cfg.control_mode().map_err(anyhow::Error::msg)?;
    if !mode.is_learned() {
        bail!("training needs a proactive policy, got '{}'", mode.name());
    }
    let decoder = make_decoder(mode, &env.net, cfg.trip_distance, cfg.gen_groups)
        .expect("learned modes always have a decoder");
    let train_cfg = cfg.train_config();

    let state_path = dir.join("trainer-state.bin");
    let state = if !fresh && state_path.is_file() {
        let mut f = fs::File::open(&state_path)?;
        let st = TrainerState::load(&mut f).context("reading trainer snapshot")?;
        println!("resuming from episode {}", st.next_episode);
        st
    } else {
        TrainerState::fresh(&env, decoder.as_ref(), &train_cfg)
    };

    let persist = |st: &TrainerState| -> Result<()> {
        let tmp = dir.join("trainer-state.bin.tmp");
        let mut f = fs::File::create(&tmp)?;
        st.save(&mut f)?;
        fs::rename(&tmp, &state_path)?;
        fs::write(dir.join("training_log.csv"), report::training_csv(&st.log))?;
        fs::write(dir.join("eval_rounds.csv"), rounds_csv(&st.eval_rounds))?;
        if let Some(round) = st.eval_rounds.last() {
            let name = format!("checkpoint-ep{:05}.actor", round.after_episode);
            let mut f = fs::File::create(dir.join(name))?;
            st.nets.actor.save(&mut f)?;
        }
        if let Some(best) = st.checkpoints.first() {
            let mut f = fs::File::create(dir.join("best.actor"))?;
            best.actor.save(&mut f)?;
            fs::write(
                dir.join("best.txt"),
                format!("episode {} mean_penalty {}\n", best.episode, best.mean_penalty),
            )?;
        }
        Ok(())
    };

    let mut persist_err = None;
    let outcome = resume_train_loop(&env, decoder.as_ref(), &train_cfg, state, &mut |st| {
        match persist(st) {
            Ok(()) => true,
            Err(e) => {
                persist_err = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = persist_err {
        return Err(e.context("persisting training progress"));
    }

    fs::write(dir.join("training_log.csv"), report::training_csv(&outcome.log))?;
    fs::write(dir.join("eval_rounds.csv"), rounds_csv(&outcome.eval_rounds))?;
    if let Some(best) = outcome.checkpoints.first() {
        let mut f = fs::File::create(dir.join("best.actor"))?;
        best.actor.save(&mut f)?;
        fs::write(
            dir.join("best.txt"),
            format!("episode {} mean_penalty {}\n", best.episode, best.mean_penalty),
        )?;
        println!(
            "trained {} episodes; best checkpoint from episode {} (mean penalty {})",
            outcome.log.len(),
            best.episode,
            best.mean_penalty
        );
    } else {
        println!("trained {} episodes; no evaluation round ran", outcome.log.len());
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, episodes: u32) -> Result<()> {
    let (env, dir) = prepare_run(cfg)?;
    let mode = cfg.control_mode().map_err(anyhow::Error::msg)?;
    let agent = resolve_policy(cfg, mode, &env, checkpoint)?;
    let seeds = eval_seeds(cfg.seed, episodes);
    let stats = evaluate(&env, &seeds, cfg.train.workers, policy_factory(cfg, mode, &agent))
        .map_err(|e| anyhow::anyhow!("evaluation failed: {e}"))?;
    fs::write(dir.join("evaluation.csv"), report::evaluation_csv(&stats))?;
    println!(
        "{}: {} episodes, mean penalty {}, {}% simulation-ending",
        mode.name(),
        stats.len(),
        report::mean_penalty(&stats),
        report::pct_sim_ending(&stats),
    );
    println!("results written to {}", dir.join("evaluation.csv").display());
    Ok(())
}

fn cmd_compare(
    cfg: &RunConfig,
    policies: &[String],
    checkpoints: &[PathBuf],
    episodes: u32,
    bins: usize,
) -> Result<()> {
    let (env, dir) = prepare_run(cfg)?;
    let seeds = eval_seeds(cfg.seed, episodes);
    let mut checkpoint_iter = checkpoints.iter();
    let mut rows: Vec<(String, Vec<EpisodeStats>)> = Vec::new();
    for name in policies {
        let mode: ControlMode = name.parse().map_err(anyhow::Error::msg)?;
        let checkpoint = if mode.is_learned() {
            Some(
                checkpoint_iter
                    .next()
                    .with_context(|| format!("not enough --checkpoint flags: '{name}' needs one"))?
                    .as_path(),
            )
        } else {
            None
        };
        let agent = resolve_policy(cfg, mode, &env, checkpoint)?;
        let stats = evaluate(&env, &seeds, cfg.train.workers, policy_factory(cfg, mode, &agent))
            .map_err(|e| anyhow::anyhow!("evaluating '{name}': {e}"))?;
        println!(
            "{name}: mean penalty {}, {}% simulation-ending",
            report::mean_penalty(&stats),
            report::pct_sim_ending(&stats),
        );
        rows.push((name.clone(), stats));
    }
    fs::write(dir.join("compare.csv"), report::compare_csv(&rows))?;
    fs::write(dir.join("histograms.csv"), report::histograms_csv(&rows, bins))?;
    println!(
        "summary in {}, histograms in {}",
        dir.join("compare.csv").display(),
        dir.join("histograms.csv").display()
    );
    Ok(())
}
