//! `lanefollow` command line: train, eval, teleop, render-preview, gradcheck, map-gen.

pub mod error;
pub mod imaging;
pub mod server;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lanefollow::camera::render_top_down;
use lanefollow::config::RunConfig;
use lanefollow::env::{ActionKind, Env, RewardKind};
use lanefollow::eval::{
    aggregate, evaluate, export, Controller, FollowDriver, PdDriver, PolicyController, Scripted, Summary,
};
use lanefollow::policy::{gradcheck, Checkpoint, NetworkSpec};
use lanefollow::ppo::{train, TRAIN_LOG};
use lanefollow::teleop::DEFAULT_PORT;
use lanefollow::track::generate_random_map;

pub use error::{CliError, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK};

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "lanefollow", version, about = "Lane-following RL workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a controller and write metric tables.
    Eval(EvalArgs),
    /// Serve the keyboard teleoperation session.
    Teleop(TeleopArgs),
    /// Dump rendered camera frames.
    RenderPreview(PreviewArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
    /// Generate random closed-loop maps.
    MapGen(MapGenArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in map name or map file.
    #[arg(long)]
    pub map: Option<String>,
    /// Episode horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run directory.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// wheel_velocity | wheel_velocity_positive_only | wheel_velocity_braking | steering
    #[arg(long)]
    pub action: Option<String>,
    /// orientation | distance_traveled
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// `pd`, `follow`, `brake`, `straight`, or a checkpoint path.
    #[arg(long)]
    pub controller: String,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Add the scripted lead vehicle.
    #[arg(long)]
    pub lead: bool,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TeleopArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Simulation speed relative to wall clock.
    #[arg(long, default_value_t = 1.0)]
    pub realtime_factor: f64,
    /// Where finished episode logs are written.
    #[arg(long, default_value = "runs/teleop")]
    pub log_dir: PathBuf,
    /// Do not stream the top-down view.
    #[arg(long)]
    pub no_top_down: bool,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Enable domain randomization regardless of the config.
    #[arg(long)]
    pub randomize: bool,
    #[arg(long, default_value = "runs/preview")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct MapGenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output directory; maps are printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Config(format!("unknown {what} `{s}`")))
}

/// Loads the config document (or defaults) and applies the shared flags.
pub fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &c.map {
        cfg.env.map = m.clone();
    }
    if let Some(h) = c.horizon {
        cfg.env.horizon = h;
    }
    if let Some(s) = c.seed {
        cfg.ppo.seed = s;
        cfg.eval.seed = s;
    }
    Ok(cfg)
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Teleop(a) => cmd_teleop(a),
        Command::RenderPreview(a) => cmd_preview(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::MapGen(a) => cmd_map_gen(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.total_steps {
        cfg.ppo.total_steps = n;
    }
    if let Some(w) = a.workers {
        cfg.ppo.num_workers = w;
    }
    if let Some(s) = &a.action {
        cfg.env.action = parse_enum::<ActionKind>("action", s)?;
    }
    if let Some(s) = &a.reward {
        cfg.env.reward.kind = parse_enum::<RewardKind>("reward", s)?;
    }
    write_resolved(&a.out, &cfg)?;
    let meta = serde_json::json!({ "action": cfg.env.action, "config": cfg.to_toml() });
    let out = train(&cfg.env, &cfg.ppo, &a.out, meta, |r| {
        if !a.quiet {
            let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
            println!(
                "iter {:>4} steps {:>8} reward {:>8} len {:>6} kl {:.4} beta {:.3} clip {:.3} loss {:.4}",
                r.iteration,
                r.steps,
                f(r.mean_episode_reward),
                f(r.mean_episode_length),
                r.mean_kl,
                r.beta,
                r.clip_fraction,
                r.loss
            );
        }
    })?;
    println!(
        "trained {} steps; log {}, final checkpoint {}",
        out.steps,
        a.out.join(TRAIN_LOG).display(),
        out.final_checkpoint.display()
    );
    Ok(())
}

type Factory = Box<dyn Fn() -> Result<Box<dyn Controller>, lanefollow::eval::EvalError> + Sync>;

/// Resolves a controller name, adjusting the environment's action mapping to match it.
pub fn controller_factory(name: &str, cfg: &mut RunConfig) -> Result<Factory, CliError> {
    let pd = cfg.pd;
    let follower = cfg.follower;
    Ok(match name {
        "pd" => {
            cfg.env.action = ActionKind::Steering;
            Box::new(move || Ok(Box::new(PdDriver::new(pd)) as Box<dyn Controller>))
        }
        "follow" => {
            cfg.env.action = ActionKind::WheelVelocityBraking;
            Box::new(move || Ok(Box::new(FollowDriver::new(follower)) as Box<dyn Controller>))
        }
        "brake" => {
            cfg.env.action = ActionKind::WheelVelocityBraking;
            Box::new(|| Ok(Box::new(Scripted::full_brake()) as Box<dyn Controller>))
        }
        "straight" => {
            cfg.env.action = ActionKind::Steering;
            Box::new(|| Ok(Box::new(Scripted::constant("straight", ActionKind::Steering, vec![0.0])) as Box<dyn Controller>))
        }
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::Io(format!("checkpoint {path} not found")));
            }
            let ck = Checkpoint::load(p)?;
            let kind = match ck.meta.get("action") {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|_| CliError::Config(format!("checkpoint {path} has an unknown action kind")))?,
                None => cfg.env.action,
            };
            cfg.env.action = kind;
            let model = Arc::new(ck.model);
            let name = p.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned());
            PolicyController::new(model.clone(), kind, name.clone())?;
            Box::new(move || {
                Ok(Box::new(PolicyController::new(model.clone(), kind, name.clone())?) as Box<dyn Controller>)
            })
        }
    })
}

pub fn format_summary(controller: &str, s: &Summary) -> String {
    let m = &s.mean;
    format!(
        "{:<12} {:>8} {:>12} {:>12} {:>12} {:>12} {:>14}\n{:<12} {:>8} {:>12.2} {:>12.3} {:>12.3} {:>12.3} {:>14.3}",
        "controller",
        "episodes",
        "survival_s",
        "dist_ego_m",
        "dist_both_m",
        "lat_dev_m_s",
        "orient_dev_r_s",
        controller,
        s.episodes,
        m.survival_time,
        m.distance_ego_lane,
        m.distance_both_lanes,
        m.lateral_deviation,
        m.orientation_deviation
    )
}

pub fn cmd_eval(a: EvalArgs) -> Result<Summary, CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.episodes {
        cfg.eval.episodes = n;
    }
    if let Some(w) = a.workers {
        cfg.eval.num_workers = w;
    }
    if a.lead {
        cfg.env.collision.enabled = true;
    }
    let factory = controller_factory(&a.controller, &mut cfg)?;
    write_resolved(&a.out, &cfg)?;
    let logs = evaluate(&cfg.env, factory, cfg.eval.episodes, cfg.eval.seed, cfg.eval.num_workers)?;
    let rows = export(&a.out, &logs)?;
    let reports: Vec<_> = rows.iter().map(|r| r.report).collect();
    let summary = aggregate(&reports).expect("at least one episode");
    std::fs::write(
        a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let label = logs.first().map_or(a.controller.clone(), |l| l.controller.clone());
    println!("{}", format_summary(&label, &summary));
    Ok(summary)
}

fn cmd_teleop(a: TeleopArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    if !(a.realtime_factor > 0.0 && a.realtime_factor.is_finite()) {
        return Err(CliError::Config("realtime-factor must be positive".into()));
    }
    cfg.validate()?;
    write_resolved(&a.log_dir, &cfg)?;
    let opts = server::ServerOptions {
        env: cfg.env,
        realtime_factor: a.realtime_factor,
        log_dir: a.log_dir,
        top_down: !a.no_top_down,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.bind.as_str(), a.port)).await?;
        println!("teleop on http://{}", listener.local_addr()?);
        server::serve(listener, opts).await
    })?;
    Ok(())
}

fn cmd_preview(a: PreviewArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if a.randomize {
        cfg.env.randomization.enabled = true;
    }
    cfg.env.action = ActionKind::Steering;
    write_resolved(&a.out, &cfg)?;
    let mut env = Env::new(cfg.env.clone())?;
    let mut pd = PdDriver::new(cfg.pd);
    let mut obs = env.reset(cfg.eval.seed);
    for k in 0..a.frames {
        imaging::save_png(env.camera_image(), &a.out.join(format!("camera_{k:03}.png")))?;
        imaging::save_png(&imaging::newest_frame(&obs), &a.out.join(format!("obs_{k:03}.png")))?;
        if env.is_done() {
            obs = env.reset(cfg.eval.seed.wrapping_add(k as u64 + 1));
            pd.reset();
            continue;
        }
        let act = pd.act(&env, &obs)?;
        obs = env.step(&act)?.observation;
    }
    let top = render_top_down(env.track(), &[*env.ego()], 100.0);
    imaging::save_png(&top, &a.out.join("top_down.png"))?;
    println!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

pub const GRADCHECK_LIMIT: f64 = 1e-3;

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut worst: f64 = 0.0;
    for dim in [1, 2] {
        let r = gradcheck(NetworkSpec::tiny(dim), a.seed + dim as u64, a.coords, a.step)?;
        println!(
            "action_dim {dim}: checked {} coordinates ({} redrawn), max relative error {:.3e} at {}",
            r.checked, r.redrawn, r.max_rel_error, r.worst
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if worst > GRADCHECK_LIMIT {
        return Err(CliError::Numerical(format!(
            "gradient check failed: {worst:.3e} > {GRADCHECK_LIMIT:e}"
        )));
    }
    Ok(())
}

fn cmd_map_gen(a: MapGenArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let gen = cfg.env.random_maps.clone().unwrap_or_default();
    let seed = a.common.seed.unwrap_or(0);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
    }
    for i in 0..a.count {
        let map = generate_random_map(lanefollow::camera::mix_seed(seed, i as u64), &gen)
            .map_err(|e| CliError::Config(e.to_string()))?;
        match &a.out {
            Some(dir) => std::fs::write(dir.join(format!("map_{i:03}.map")), map.serialize())?,
            None => println!("{}", map.serialize()),
        }
    }
    Ok(())
}
