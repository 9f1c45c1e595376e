use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use v2x_marl::baselines::Scheme;
use v2x_marl::harness::{
    load_config, run_channel_validation, run_experiment, run_training, ExperimentSpec,
    PolicySource, SchemeChoice,
};
use v2x_marl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "v2x-marl",
    version,
    about = "V2X spectrum sharing with multi-agent deep Q-learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learning scheme(s) and write checkpoints.
    Train,
    /// Evaluate checkpoints written by `train` across the payload sizes.
    Eval,
    /// Evaluate a baseline scheme across the payload sizes.
    Baseline,
    /// Train where needed, then evaluate every payload size.
    Sweep,
    /// Check channel statistics against their configured targets.
    ValidateChannel,
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// marl, sarl, random, maxv2v, nov2v or all.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Evaluate a single payload of N x 1060 bytes.
    #[arg(long, global = true)]
    payload_multiplier: Option<u64>,
    /// Training episodes for `train`, evaluation episodes otherwise.
    #[arg(long, global = true)]
    episodes: Option<usize>,
}

fn build_spec(cmd: &Command, o: &Overrides) -> Result<ExperimentSpec> {
    let mut spec = match &o.config {
        Some(path) => load_config(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = o.seed {
        spec.seed = seed;
    }
    if let Some(out) = &o.out {
        spec.output_dir = out.clone();
    }
    if let Some(name) = &o.scheme {
        spec.scheme = name.parse()?;
    }
    if let Some(m) = o.payload_multiplier {
        spec.payload_multipliers = vec![m];
    }
    if let Some(n) = o.episodes {
        if matches!(cmd, Command::Train) {
            let t = &mut spec.train;
            let scaled = (t.anneal_episodes as f64 * n as f64 / t.total_episodes.max(1) as f64)
                .round() as usize;
            t.total_episodes = n;
            t.anneal_episodes = scaled.clamp(1, n.max(1));
        } else {
            spec.eval_episodes = n;
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: &Cli) -> Result<()> {
    let spec = build_spec(&cli.command, &cli.opts)?;
    match cli.command {
        Command::Train => {
            let reward = run_training(&spec)?;
            println!(
                "reward lambda_c={} lambda_d={} beta={}",
                reward.lambda_c, reward.lambda_d, reward.beta
            );
        }
        Command::Eval | Command::Sweep => {
            let source = if matches!(cli.command, Command::Eval) {
                PolicySource::Checkpoints
            } else {
                PolicySource::Train
            };
            print_metrics(&run_experiment(&spec, source)?.metrics);
        }
        Command::Baseline => {
            if spec.scheme == SchemeChoice::One(Scheme::Marl) {
                return Err(Error::config(
                    "scheme",
                    "baseline needs sarl, random, maxv2v, nov2v or all",
                ));
            }
            print_metrics(&run_experiment(&spec, PolicySource::Train)?.metrics);
        }
        Command::ValidateChannel => {
            let r = run_channel_validation(&spec)?;
            println!(
                "fast fading mean {:.5} over {} draws",
                r.fading_mean, r.fading_draws
            );
            println!(
                "V2V shadowing std {:.4} dB (target {})",
                r.v2v_shadow_std, spec.sim.v2v_shadow_std_db
            );
            println!(
                "V2I shadowing std {:.4} dB (target {})",
                r.v2i_shadow_std, spec.sim.v2i_shadow_std_db
            );
        }
    }
    Ok(())
}

fn print_metrics(rows: &[v2x_marl::evaluation::Metrics]) {
    println!(
        "{:<8} {:>8} {:>16} {:>10}",
        "scheme", "bytes", "V2I Mbps", "delivery"
    );
    for m in rows {
        println!(
            "{:<8} {:>8} {:>9.3} ±{:<6.3} {:>10.4}",
            m.scheme,
            m.payload_bytes,
            m.v2i_sum_capacity_bps_mean / 1e6,
            m.v2i_ci95 / 1e6,
            m.delivery_probability
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
