//! Experiment orchestration: configuration, training, payload sweeps and
//! artifact files.

pub mod config;
pub mod csv;
pub mod plot;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::baselines::{sarl_train, MaxV2vPolicy, NoV2vPolicy, RandomPolicy, SarlPolicy, Scheme};
use crate::channel::{pathloss_v2i, pathloss_v2v, sample_fast_fading, update_shadowing};
use crate::env::{RewardParams, PAYLOAD_UNIT_BYTES};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_policy, EvalOptions, EvalRun, JointPolicy, MarlPolicy, Metrics};
use crate::marl::{train, EpisodeLog, TrainedAgents};
use crate::nn::{checkpoint, QNetwork};
use crate::seed::{purpose, SeedHierarchy};

pub use config::{load_config, parse_config, ExperimentSpec, SchemeChoice};
use plot::{line_chart, Series};

/// Files written by one command. Dropped without [`Artifacts::keep`], every
/// file and directory it created is removed again.
pub struct Artifacts {
    root: PathBuf,
    created: Vec<PathBuf>,
    kept: bool,
}

impl Artifacts {
    pub fn open(root: &Path) -> Result<Self> {
        let mut art = Self {
            root: root.to_path_buf(),
            created: Vec::new(),
            kept: false,
        };
        art.create_dirs(root)?;
        Ok(art)
    }

    fn create_dirs(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut p = Some(dir);
        while let Some(d) = p {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            p = d.parent();
        }
        for d in missing.into_iter().rev() {
            fs::create_dir(&d).map_err(|e| Error::io(&d, e))?;
            self.created.push(d);
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `rel` (creating parent directories) and returns its full path.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.create_dirs(parent)?;
        }
        if !path.exists() {
            self.created.push(path.clone());
        }
        Ok(path)
    }

    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.path(rel)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<PathBuf> {
        self.write_with(rel, |w| w.write_all(contents.as_bytes()))
    }

    pub fn keep(mut self) {
        self.kept = true;
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if self.kept {
            return;
        }
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            };
        }
    }
}

/// Runs `f` on a fresh artifact set, removing what it wrote if it fails.
pub fn with_artifacts<T, F>(root: &Path, f: F) -> Result<T>
where
    F: FnOnce(&mut Artifacts) -> Result<T>,
{
    let mut art = Artifacts::open(root)?;
    let value = f(&mut art)?;
    art.keep();
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub reward: RewardParams,
    pub metrics: Vec<Metrics>,
}

/// Where trained schemes get their networks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySource {
    Train,
    /// Load from `<output_dir>/checkpoints`, written by an earlier `train`.
    Checkpoints,
}

fn checkpoint_dir(scheme: Scheme) -> String {
    format!("checkpoints/{scheme}")
}

fn write_reward(art: &mut Artifacts, reward: &RewardParams) -> Result<()> {
    let text = toml::to_string(reward).map_err(|e| Error::Parse(e.to_string()))?;
    art.write("reward_params.toml", &text)?;
    Ok(())
}

fn write_training_outputs(
    art: &mut Artifacts,
    spec: &ExperimentSpec,
    scheme: Scheme,
    log: &[EpisodeLog],
) -> Result<()> {
    art.write_with(&format!("training_log_{scheme}.csv"), |w| {
        csv::write_training_log(log, w)
    })?;
    if spec.plots {
        let window = 50.min(log.len()).max(1);
        let points: Vec<(f64, f64)> = log
            .windows(window)
            .map(|w| {
                let mean = w.iter().map(|r| r.episode_return).sum::<f64>() / window as f64;
                (w[window - 1].episode as f64, mean)
            })
            .collect();
        let svg = line_chart(
            &format!("Training return ({scheme}, {window}-episode moving average)"),
            "episode",
            "return per episode",
            &[Series {
                name: scheme.to_string(),
                points,
            }],
        );
        art.write(&format!("training_return_{scheme}.svg"), &svg)?;
    }
    Ok(())
}

/// Trains `scheme` and stores its networks and log. Returns a policy.
fn train_scheme(
    art: &mut Artifacts,
    spec: &ExperimentSpec,
    scheme: Scheme,
    reward: &RewardParams,
) -> Result<TrainedPolicy> {
    match scheme {
        Scheme::Marl => {
            let out = train(&spec.sim, &spec.train, reward, spec.seed)?;
            write_training_outputs(art, spec, scheme, &out.log)?;
            let dir = art.path(&checkpoint_dir(scheme))?;
            for k in 0..out.trained.networks.len() {
                art.path(&format!("{}/agent_{k}.qnet", checkpoint_dir(scheme)))?;
            }
            art.path(&format!("{}/fingerprint.toml", checkpoint_dir(scheme)))?;
            out.trained.save(&dir)?;
            art.write(
                &format!("{}/config.toml", checkpoint_dir(scheme)),
                &spec.to_toml()?,
            )?;
            Ok(TrainedPolicy::Marl(out.trained))
        }
        Scheme::Sarl => {
            let out = sarl_train(&spec.sim, &spec.train, reward, spec.seed)?;
            write_training_outputs(art, spec, scheme, &out.log)?;
            let path = art.path(&format!("{}/shared.qnet", checkpoint_dir(scheme)))?;
            checkpoint::save(&out.agent.q, &path)?;
            art.write(
                &format!("{}/config.toml", checkpoint_dir(scheme)),
                &spec.to_toml()?,
            )?;
            Ok(TrainedPolicy::Sarl(out.agent.q))
        }
        _ => Err(Error::usage(format!("scheme {scheme} is not trained"))),
    }
}

fn load_scheme(spec: &ExperimentSpec, scheme: Scheme) -> Result<TrainedPolicy> {
    let dir = spec.output_dir.join(checkpoint_dir(scheme));
    match scheme {
        Scheme::Marl => Ok(TrainedPolicy::Marl(TrainedAgents::load(&dir)?)),
        Scheme::Sarl => Ok(TrainedPolicy::Sarl(checkpoint::load(
            &dir.join("shared.qnet"),
        )?)),
        _ => Err(Error::usage(format!("scheme {scheme} has no checkpoint"))),
    }
}

enum TrainedPolicy {
    Marl(TrainedAgents),
    Sarl(QNetwork),
}

fn make_policy(
    spec: &ExperimentSpec,
    scheme: Scheme,
    trained: Option<&TrainedPolicy>,
    payload_index: usize,
) -> Result<Box<dyn JointPolicy>> {
    let seeds = SeedHierarchy::new(spec.seed);
    Ok(match (scheme, trained) {
        (Scheme::Marl, Some(TrainedPolicy::Marl(agents))) => Box::new(MarlPolicy {
            agents: agents.clone(),
        }),
        (Scheme::Sarl, Some(TrainedPolicy::Sarl(net))) => Box::new(SarlPolicy::new(net.clone())),
        (Scheme::Random, _) => Box::new(RandomPolicy::new(
            seeds.stream(purpose::EVAL_POLICY, payload_index as u64),
        )),
        (Scheme::MaxV2v, _) => Box::new(MaxV2vPolicy::new(&spec.sim, spec.search_cap as u128)?),
        (Scheme::NoV2v, _) => Box::new(NoV2vPolicy),
        _ => return Err(Error::usage(format!("no trained networks for {scheme}"))),
    })
}

/// Trains the learning schemes in `spec` and writes checkpoints and logs.
pub fn run_training(spec: &ExperimentSpec) -> Result<RewardParams> {
    spec.validate()?;
    let trained: Vec<Scheme> = spec
        .scheme
        .schemes()
        .into_iter()
        .filter(|s| s.needs_training())
        .collect();
    if trained.is_empty() {
        return Err(Error::config("scheme", "train needs marl, sarl or all"));
    }
    with_artifacts(&spec.output_dir, |art| {
        art.write("config.resolved.toml", &spec.to_toml()?)?;
        let reward = spec.reward.resolve(&spec.sim, spec.seed)?;
        write_reward(art, &reward)?;
        for scheme in trained {
            log::info!("training {scheme}");
            train_scheme(art, spec, scheme, &reward)?;
        }
        Ok(reward)
    })
}

/// Trains (or loads) every scheme of `spec` and evaluates it at every
/// payload size on shared evaluation draws.
pub fn run_experiment(spec: &ExperimentSpec, source: PolicySource) -> Result<ExperimentReport> {
    spec.validate()?;
    with_artifacts(&spec.output_dir, |art| {
        art.write("config.resolved.toml", &spec.to_toml()?)?;
        let reward = spec.reward.resolve(&spec.sim, spec.seed)?;
        write_reward(art, &reward)?;
        let payloads = spec.payload_bytes();
        let mut metrics = Vec::new();
        let mut episode0 = Vec::new();
        for scheme in spec.scheme.schemes() {
            if scheme == Scheme::MaxV2v {
                MaxV2vPolicy::new(&spec.sim, spec.search_cap as u128)?;
            }
            let trained = match (scheme.needs_training(), source) {
                (false, _) => None,
                (true, PolicySource::Train) => Some(train_scheme(art, spec, scheme, &reward)?),
                (true, PolicySource::Checkpoints) => Some(load_scheme(spec, scheme)?),
            };
            for (i, &bytes) in payloads.iter().enumerate() {
                log::info!("evaluating {scheme} at {bytes} bytes");
                let mut policy = make_policy(spec, scheme, trained.as_ref(), i)?;
                let opts = EvalOptions {
                    episodes: spec.eval_episodes,
                    payload_bytes: bytes,
                    record_trace: true,
                };
                let run = evaluate_policy(policy.as_mut(), &spec.sim, &reward, opts, spec.seed)?;
                art.write_with(&format!("trace_{scheme}_{bytes}.csv"), |w| {
                    csv::write_trace(&run.trace, w)
                })?;
                if i == 0 {
                    episode0.push((scheme, bytes, remaining_series(&run, spec.sim.k_links)));
                }
                metrics.push(run.metrics(scheme.name(), bytes));
            }
        }
        art.write_with("metrics.csv", |w| csv::write_metrics(&metrics, w))?;
        if spec.plots {
            write_sweep_plots(art, &metrics)?;
            for (scheme, bytes, series) in episode0 {
                let svg = line_chart(
                    &format!("Remaining V2V payload, first episode ({scheme}, {bytes} bytes)"),
                    "time step (ms)",
                    "remaining bits",
                    &series,
                );
                art.write(&format!("remaining_payload_{scheme}.svg"), &svg)?;
            }
        }
        Ok(ExperimentReport { reward, metrics })
    })
}

fn remaining_series(run: &EvalRun, k_links: usize) -> Vec<Series> {
    (0..k_links)
        .map(|link| Series {
            name: format!("link {link}"),
            points: run
                .trace
                .iter()
                .filter(|r| r.episode == 0 && r.link == link)
                .map(|r| (r.step as f64 + 1.0, r.remaining_bits))
                .collect(),
        })
        .collect()
}

fn write_sweep_plots(art: &mut Artifacts, metrics: &[Metrics]) -> Result<()> {
    let mut schemes: Vec<&str> = Vec::new();
    for m in metrics {
        if !schemes.contains(&m.scheme.as_str()) {
            schemes.push(&m.scheme);
        }
    }
    let series = |value: fn(&Metrics) -> f64| -> Vec<Series> {
        schemes
            .iter()
            .map(|s| Series {
                name: s.to_string(),
                points: metrics
                    .iter()
                    .filter(|m| m.scheme == *s)
                    .map(|m| (m.payload_bytes as f64 / PAYLOAD_UNIT_BYTES as f64, value(m)))
                    .collect(),
            })
            .collect()
    };
    let capacity = line_chart(
        "Mean V2I sum capacity",
        "V2V payload (x 1060 bytes)",
        "Mbps",
        &series(|m| m.v2i_sum_capacity_bps_mean / 1e6),
    );
    art.write("capacity_vs_payload.svg", &capacity)?;
    let delivery = line_chart(
        "V2V payload delivery probability",
        "V2V payload (x 1060 bytes)",
        "probability",
        &series(|m| m.delivery_probability),
    );
    art.write("delivery_vs_payload.svg", &delivery)?;
    Ok(())
}

/// Sample statistics of the channel model next to their configured targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub fading_mean: f64,
    pub fading_draws: usize,
    /// `(bin lower edge, empirical density, exponential density)`.
    pub fading_histogram: Vec<(f64, f64, f64)>,
    pub v2v_shadow_std: f64,
    pub v2i_shadow_std: f64,
    /// `(distance m, V2I dB, V2V dB)`.
    pub pathloss: Vec<(f64, f64, f64)>,
}

/// Stationary standard deviation of the shadowing process after `steps`
/// updates of `step_m` metres each.
pub fn shadowing_chain_std<R: Rng + ?Sized>(
    std_db: f64,
    decorrelation_m: f64,
    step_m: f64,
    steps: usize,
    rng: &mut R,
) -> f64 {
    let mut x = 0.0;
    let (mut sum, mut sq) = (0.0, 0.0);
    for i in 0..steps + 100 {
        x = update_shadowing(x, step_m, std_db, decorrelation_m, rng);
        if i >= 100 {
            sum += x;
            sq += x * x;
        }
    }
    let n = steps as f64;
    (sq / n - (sum / n).powi(2)).sqrt()
}

pub fn channel_report(spec: &ExperimentSpec) -> Result<ChannelReport> {
    spec.sim.validate()?;
    let sim = &spec.sim;
    let seeds = SeedHierarchy::new(spec.seed);
    let mut rng = seeds.stream("channel-validation", 0);
    let draws = 1_000_000;
    let (bins, width) = (40, 0.2);
    let mut counts = vec![0usize; bins];
    let mut sum = 0.0;
    for _ in 0..draws {
        let h = sample_fast_fading(&mut rng);
        sum += h;
        let b = (h / width) as usize;
        if b < bins {
            counts[b] += 1;
        }
    }
    let fading_mean = sum / draws as f64;
    let fading_histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let lo = i as f64 * width;
            let expected = ((-lo).exp() - (-(lo + width)).exp()) / width;
            (lo, c as f64 / (draws as f64 * width), expected)
        })
        .collect();
    // One decorrelation distance per update keeps successive samples well mixed.
    let v2v_shadow_std = shadowing_chain_std(
        sim.v2v_shadow_std_db,
        sim.v2v_decorrelation_m,
        sim.v2v_decorrelation_m,
        200_000,
        &mut rng,
    );
    let v2i_shadow_std = shadowing_chain_std(
        sim.v2i_shadow_std_db,
        sim.v2i_decorrelation_m,
        sim.v2i_decorrelation_m,
        200_000,
        &mut rng,
    );
    let h = sim.vehicle_antenna_height_m;
    let dh = sim.bs_antenna_height_m - h;
    let mut pathloss = Vec::new();
    for d in [3.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 400.0] {
        let d3 = (d * d + dh * dh).sqrt() / 1000.0;
        pathloss.push((d, pathloss_v2i(d3)?, pathloss_v2v(d, sim.carrier_ghz, h, h)));
    }
    Ok(ChannelReport {
        fading_mean,
        fading_draws: draws,
        fading_histogram,
        v2v_shadow_std,
        v2i_shadow_std,
        pathloss,
    })
}

/// Writes `channel_validation.csv`, `fading_histogram.csv` and `pathloss.csv`.
pub fn run_channel_validation(spec: &ExperimentSpec) -> Result<ChannelReport> {
    let report = channel_report(spec)?;
    with_artifacts(&spec.output_dir, |art| {
        let sim = &spec.sim;
        art.write_with("channel_validation.csv", |w| {
            writeln!(w, "quantity,measured,target")?;
            writeln!(w, "fast_fading_mean,{},1", report.fading_mean)?;
            writeln!(
                w,
                "v2v_shadowing_std_db,{},{}",
                report.v2v_shadow_std, sim.v2v_shadow_std_db
            )?;
            writeln!(
                w,
                "v2i_shadowing_std_db,{},{}",
                report.v2i_shadow_std, sim.v2i_shadow_std_db
            )
        })?;
        art.write_with("fading_histogram.csv", |w| {
            writeln!(w, "bin_start,empirical_density,exponential_density")?;
            for (lo, e, x) in &report.fading_histogram {
                writeln!(w, "{lo},{e},{x}")?;
            }
            Ok(())
        })?;
        art.write_with("pathloss.csv", |w| {
            writeln!(w, "distance_m,v2i_pathloss_db,v2v_pathloss_db")?;
            for (d, a, b) in &report.pathloss {
                writeln!(w, "{d},{a},{b}")?;
            }
            Ok(())
        })?;
        Ok(())
    })?;
    Ok(report)
}
