use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use dynhtm::causality::{ccm_skill, synchrony_test};
use dynhtm::dynsys::{coupled_logistic, integrate, observe, LogisticPair, ObservationConfig, State3, Trajectory};
use dynhtm::embedding::{delay_embed, estimate_k, estimate_tau, EmbeddingSpec, PointCloud, TimeSeries};
use dynhtm::forecast::{build_library, correction_vector, predict_by_regime, predict_multi, RegimeTracker};
use dynhtm::sdr::{encode_fields, overlap, Sdr, TemporalPooler, TransitionMemory};
use dynhtm::{io, stats, Error, Exec};

use crate::config::{ConfigError, ExperimentConfig, Fixture};
use crate::output::{sub_seed, Format, Manifest, RunDir};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Generate,
    Embed,
    Forecast,
    Regimes,
    Causality,
    Htm,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Embed => "embed",
            Command::Forecast => "forecast",
            Command::Regimes => "regimes",
            Command::Causality => "causality",
            Command::Htm => "htm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Command::Generate,
            Command::Embed,
            Command::Forecast,
            Command::Regimes,
            Command::Causality,
            Command::Htm,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Usage(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, RunError>;

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<Manifest> {
    let mut dir = RunDir::new(out, format)?;
    match cmd {
        Command::Generate => generate(cfg, &mut dir)?,
        Command::Embed => embed(cfg, &mut dir)?,
        Command::Forecast => forecast(cfg, &mut dir)?,
        Command::Regimes => regimes(cfg, &mut dir)?,
        Command::Causality => causality(cfg, &mut dir)?,
        Command::Htm => htm(cfg, &mut dir)?,
    }
    Ok(dir.finish(cmd.name(), cfg)?)
}

fn trajectory_from(cfg: &ExperimentConfig, x0: State3) -> Result<Trajectory> {
    Ok(integrate(
        &cfg.schedule()?,
        x0,
        cfg.system.dt,
        cfg.system.n_steps,
        cfg.method(),
    )?)
}

fn csv<F: FnOnce(&mut Vec<u8>) -> dynhtm::Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_series(dir: &mut RunDir, path: &Path) -> Result<TimeSeries> {
    let bytes = dir
        .read_input(path)
        .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))?;
    io::read_series(bytes.as_slice()).map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))
}

/// The configured input series, or the observed system when none is given.
fn series(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<TimeSeries> {
    match &cfg.io.series {
        Some(path) => read_series(dir, path),
        None => {
            let traj = trajectory_from(cfg, cfg.x0())?;
            Ok(observe(&traj, &cfg.observation(sub_seed(cfg.seed, "observe")))?)
        }
    }
}

#[derive(Serialize)]
struct EmbeddingInfo {
    tau: usize,
    k: usize,
    tau_estimated: bool,
    k_estimated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    false_neighbor_fractions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturated: Option<bool>,
    points: usize,
}

fn resolve_embedding(cfg: &ExperimentConfig, s: &TimeSeries) -> Result<(EmbeddingSpec, EmbeddingInfo)> {
    let e = &cfg.embedding;
    let tau = match e.tau {
        Some(t) => t,
        None => estimate_tau(s, e.max_lag)?,
    };
    let (k, fractions, saturated) = match e.k {
        Some(k) => (k, None, None),
        None => {
            let est = estimate_k(s, tau, e.k_max)?;
            (est.k, Some(est.fractions), Some(est.saturated))
        }
    };
    let spec = EmbeddingSpec::new(tau, k)?;
    let points = s.len().saturating_sub(spec.window() - 1);
    let info = EmbeddingInfo {
        tau,
        k,
        tau_estimated: e.tau.is_none(),
        k_estimated: e.k.is_none(),
        false_neighbor_fractions: fractions,
        saturated,
        points,
    };
    Ok((spec, info))
}

fn generate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let traj = trajectory_from(cfg, cfg.x0())?;
    let s = observe(&traj, &cfg.observation(sub_seed(cfg.seed, "observe")))?;
    dir.write_table("trajectory", csv(|b| io::write_trajectory(b, traj.dt, &traj.states))?)?;
    dir.write_table("series", csv(|b| io::write_series(b, &s))?)?;
    Ok(())
}

fn embed(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let s = series(cfg, dir)?;
    let (spec, info) = resolve_embedding(cfg, &s)?;
    let cloud = delay_embed(&s, spec)?;
    dir.write_table("cloud", csv(|b| io::write_point_cloud(b, &cloud))?)?;
    dir.write_json("embedding.json", &info)?;
    Ok(())
}

fn forecast(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let f = &cfg.forecast;
    let s = series(cfg, dir)?;
    let (spec, info) = resolve_embedding(cfg, &s)?;
    let cloud = delay_embed(&s, spec)?;
    let split = (cloud.len() as f64 * f.train_fraction).floor() as usize;
    let train = cloud.select(&(0..split).collect::<Vec<_>>());
    let test = cloud.select(&(split..cloud.len()).collect::<Vec<_>>());
    let lib = build_library(&train, f.horizon)?;
    let pairs: Vec<(usize, usize)> = (0..test.len())
        .filter_map(|i| test.position_of(test.source_index()[i] + f.horizon).map(|j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData {
            what: "held-out points with a successor at the forecast horizon",
            needed: 1,
            got: 0,
        }
        .into());
    }
    let sets = Exec::default().try_map(pairs.len(), |p| {
        predict_multi(&lib, test.point(pairs[p].0), f.kn, f.gap_factor)
    })?;
    let mut sq = 0.0;
    let mut modes = 0;
    for ((_, j), set) in pairs.iter().zip(&sets) {
        modes += set.modes.len();
        for (a, m) in test.point(*j).iter().zip(&set.modes[0].mean) {
            sq += (a - m) * (a - m);
        }
    }
    let rmse = (sq / (pairs.len() * spec.k) as f64).sqrt();
    let scale = stats::std_dev(&s.values);
    let rows: Vec<_> = pairs
        .iter()
        .zip(sets)
        .map(|((i, _), set)| (test.source_index()[*i], set))
        .collect();
    dir.write_table("predictions", csv(|b| io::write_predictions(b, spec.k, &rows))?)?;
    dir.write_json(
        "forecast.json",
        &json!({
            "tau": info.tau,
            "k": info.k,
            "horizon": f.horizon,
            "library_size": lib.len(),
            "queries": pairs.len(),
            "mean_modes": modes as f64 / pairs.len() as f64,
            "rmse": rmse,
            "normalized_rmse": if scale > 0.0 { rmse / scale } else { f64::NAN },
        }),
    )?;
    Ok(())
}

fn regimes(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let r = &cfg.regimes;
    let schedule = cfg.schedule()?;
    let train_traj = trajectory_from(cfg, cfg.x0())?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "regimes"));
    let mut jitter = || {
        if r.perturbation > 0.0 {
            rng.random_range(-r.perturbation..r.perturbation)
        } else {
            0.0
        }
    };
    let x0 = cfg.x0();
    let tracked_x0 = State3::new(x0.x + jitter(), x0.y + jitter(), x0.z + jitter());
    let tracked_traj = trajectory_from(cfg, tracked_x0)?;
    let train_series = observe(&train_traj, &cfg.observation(sub_seed(cfg.seed, "observe")))?;
    let tracked_series = observe(&tracked_traj, &cfg.observation(sub_seed(cfg.seed, "observe.tracked")))?;
    let (spec, info) = resolve_embedding(cfg, &train_series)?;

    let train = delay_embed(&train_series, spec)?;
    let starts: Vec<usize> = schedule.segments().iter().map(|(s, _)| *s).collect();
    let settled: Vec<usize> = (0..train.len())
        .filter(|&i| {
            let t = train.source_index()[i];
            let seg = schedule.segment_index(t);
            let end = starts.get(seg + 1).copied().unwrap_or(usize::MAX);
            t >= starts[seg] + r.settle && t + r.horizon < end
        })
        .collect();
    let lib = build_library(&train.select(&settled), r.horizon)?.with_regime_labels(|t| schedule.segment_index(t));

    let tracked = delay_embed(&tracked_series, spec)?;
    let mut tracker = RegimeTracker::new(r.decay)?;
    let mut events = String::new();
    let mut history: Vec<(usize, usize)> = Vec::new();
    for i in 0..tracked.len() {
        let t = tracked.source_index()[i];
        let Some(j) = tracked.position_of(t + r.horizon) else {
            continue;
        };
        let pred = predict_by_regime(&lib, tracked.point(i), r.kn)?;
        let corr = correction_vector(&pred, tracked.point(j))?;
        let fulfilled = pred.modes[corr.mode].regime.expect("labelled library");
        tracker.observe(fulfilled);
        let current = tracker.current().expect("observed at least once");
        // the outcome is known once the successor has been observed
        let seen = t + r.horizon;
        events.push_str(&json!({"step": seen, "regime": current, "credit": tracker.credit(current)}).to_string());
        events.push('\n');
        history.push((seen, current));
    }
    if history.is_empty() {
        return Err(Error::InsufficientData {
            what: "tracked points with a successor",
            needed: 1,
            got: 0,
        }
        .into());
    }
    let switches: Vec<_> = starts
        .iter()
        .enumerate()
        .skip(1)
        .map(|(seg, &step)| {
            let before = history.iter().rev().find(|(t, _)| *t < step).map(|(_, c)| *c);
            let flip = history.iter().find(|(t, c)| *t >= step && *c == seg).map(|(t, _)| *t);
            json!({"step": step, "regime": seg, "regime_before": before, "flip_step": flip, "delay": flip.map(|f| f - step)})
        })
        .collect();
    dir.write("regimes.jsonl", events.as_bytes())?;
    dir.write_json(
        "regimes.json",
        &json!({"tau": info.tau, "k": info.k, "library_size": lib.len(), "switches": switches}),
    )?;
    Ok(())
}

fn causality(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let c = &cfg.causality;
    let (x, y) = match (&cfg.io.series, &cfg.io.series_y) {
        (Some(px), Some(py)) => (read_series(dir, px)?, read_series(dir, py)?),
        (None, None) => match c.fixture {
            Fixture::Logistic => coupled_logistic(LogisticPair::X_DRIVES_Y, c.n, 100, sub_seed(cfg.seed, "causality"))?,
            Fixture::Lorenz => {
                let traj = trajectory_from(cfg, cfg.x0())?;
                let obs = |weights| ObservationConfig {
                    weights,
                    noise_std: 0.0,
                    seed: 0,
                };
                (
                    observe(&traj, &obs([1.0, 0.0, 0.0]))?,
                    observe(&traj, &obs([0.0, 1.0, 0.0]))?,
                )
            }
        },
        _ => {
            return Err(RunError::Usage(
                "io.series and io.series_y must be given together".into(),
            ))
        }
    };
    if x.len() != y.len() {
        return Err(Error::Alignment(format!("series lengths differ: {} vs {}", x.len(), y.len())).into());
    }
    let spec = EmbeddingSpec::new(c.tau, c.k)?;
    let ccm_seed = sub_seed(cfg.seed, "ccm");
    let forward = ccm_skill(&x, &y, spec, &c.library_sizes, c.kn(), ccm_seed)?;
    let reverse = ccm_skill(&y, &x, spec, &c.library_sizes, c.kn(), ccm_seed)?;
    dir.write_table("ccm", csv(|b| io::write_ccm(b, &forward, &reverse))?)?;
    let (xc, yc) = PointCloud::align(&delay_embed(&x, spec)?, &delay_embed(&y, spec)?);
    let report = synchrony_test(&xc, &yc, c.l_k, c.theiler(), sub_seed(cfg.seed, "surrogates"))?;
    dir.write_json(
        "causality.json",
        &json!({
            "l_xy": report.observed.l_xy,
            "l_yx": report.observed.l_yx,
            "null_xy": report.null_xy,
            "null_yx": report.null_yx,
            "verdict": report.verdict.as_str(),
            "l_k": c.l_k,
            "theiler": c.theiler(),
            "ccm_kn": c.kn(),
        }),
    )?;
    Ok(())
}

fn htm(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let s = &cfg.sdr;
    let traj = trajectory_from(cfg, cfg.x0())?;
    let encoders = s.encoder_configs();
    let mut tm = TransitionMemory::new(s.tm_config(sub_seed(cfg.seed, "tm")))?;
    let mut pooler = TemporalPooler::new(s.width(), s.pooler_config())?;
    let mut inputs = String::new();
    let mut pooled_lines = String::new();
    let mut trace = Vec::new();
    let mut prev: Option<Sdr> = None;
    let mut clamped = 0usize;
    for step in (0..traj.len()).step_by(s.stride) {
        let st = traj.states[step];
        let coords = [st.x, st.y, st.z];
        let fields: Vec<_> = encoders.iter().map(|(axis, e)| (*e, coords[*axis])).collect();
        let enc = encode_fields(&fields)?;
        clamped += enc.clamped as usize;
        let out = tm.step(&enc.sdr, true)?;
        let pooled = pooler.step(&out)?;
        let ov = match &prev {
            Some(p) => overlap(p, &pooled)?,
            None => 0,
        };
        trace.push((step, out.anomaly, ov));
        inputs.push_str(&json!({"step": step, "active": enc.sdr.active()}).to_string());
        inputs.push('\n');
        pooled_lines.push_str(&json!({"step": step, "active": pooled.active()}).to_string());
        pooled_lines.push('\n');
        prev = Some(pooled);
    }
    dir.write("sdr_input.jsonl", inputs.as_bytes())?;
    dir.write("sdr_pooled.jsonl", pooled_lines.as_bytes())?;
    dir.write_table("anomaly", csv(|b| io::write_anomaly_trace(b, &trace))?)?;
    let anomalies: Vec<f64> = trace.iter().map(|t| t.1).collect();
    dir.write_json(
        "htm.json",
        &json!({
            "steps": trace.len(),
            "width": s.width(),
            "mean_anomaly": stats::mean(&anomalies),
            "segments": tm.segment_count(),
            "clamped_inputs": clamped,
        }),
    )?;
    Ok(())
}
