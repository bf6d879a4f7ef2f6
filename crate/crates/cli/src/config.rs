use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dynhtm::dynsys::{Method, ObservationConfig, ParameterSchedule, State3, SystemParams};
use dynhtm::sdr::{PoolerConfig, ScalarEncoderConfig, TmConfig};

/// A config that failed to parse or validate. Always a usage error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemConfig,
    /// Parameter changes applied from a given step onwards.
    pub schedule: Vec<SwitchConfig>,
    pub observation: ObservationBlock,
    pub embedding: EmbeddingConfig,
    pub forecast: ForecastConfig,
    pub regimes: RegimesConfig,
    pub causality: CausalityConfig,
    pub sdr: SdrConfig,
    pub io: IoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: [f64; 3],
    pub dt: f64,
    pub n_steps: usize,
    pub method: MethodName,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p = SystemParams::CLASSICAL;
        SystemConfig {
            sigma: p.sigma,
            rho: p.rho,
            beta: p.beta,
            x0: [1.0, 1.0, 1.0],
            dt: 0.01,
            n_steps: 10_000,
            method: MethodName::Rk4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationBlock {
    pub weights: [f64; 3],
    pub noise_std: f64,
}

impl Default for ObservationBlock {
    fn default() -> Self {
        ObservationBlock {
            weights: [1.0, 0.0, 0.0],
            noise_std: 0.0,
        }
    }
}

/// `tau` and `k` are estimated from the data when left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub tau: Option<usize>,
    pub k: Option<usize>,
    pub max_lag: usize,
    pub k_max: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            tau: None,
            k: None,
            max_lag: 50,
            k_max: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub kn: usize,
    pub horizon: usize,
    pub gap_factor: f64,
    /// Leading share of the embedded points used as the library.
    pub train_fraction: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            kn: 8,
            horizon: 1,
            gap_factor: 3.0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimesConfig {
    pub kn: usize,
    pub horizon: usize,
    pub decay: f64,
    /// Library points this many steps after the start or a switch are left
    /// out while the trajectory settles.
    pub settle: usize,
    /// Largest offset of the tracked run's start from `system.x0`, per axis.
    pub perturbation: f64,
}

impl Default for RegimesConfig {
    fn default() -> Self {
        RegimesConfig {
            kn: 8,
            horizon: 10,
            decay: 0.05,
            settle: 1000,
            perturbation: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fixture {
    /// Coupled logistic maps with x driving y.
    #[default]
    Logistic,
    /// x and y coordinates of the configured system.
    Lorenz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalityConfig {
    pub fixture: Fixture,
    /// Samples of the logistic fixture.
    pub n: usize,
    pub tau: usize,
    pub k: usize,
    /// Neighbours per L-index anchor.
    pub l_k: usize,
    /// Defaults to `tau·k`.
    pub theiler: Option<usize>,
    /// Defaults to `k + 1`.
    pub kn: Option<usize>,
    pub library_sizes: Vec<usize>,
}

impl Default for CausalityConfig {
    fn default() -> Self {
        CausalityConfig {
            fixture: Fixture::Logistic,
            n: 1000,
            tau: 1,
            k: 2,
            l_k: 5,
            theiler: None,
            kn: None,
            library_sizes: vec![10, 20, 50, 100, 200, 400, 800, 990],
        }
    }
}

impl CausalityConfig {
    pub fn theiler(&self) -> usize {
        self.theiler.unwrap_or(self.tau * self.k)
    }

    pub fn kn(&self) -> usize {
        self.kn.unwrap_or(self.k + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEncoder {
    /// One of `x`, `y`, `z`.
    pub field: String,
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub w: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdrConfig {
    /// Every `stride`-th integration step is encoded.
    pub stride: usize,
    pub encoders: Vec<FieldEncoder>,
    pub cells_per_column: usize,
    pub activation_threshold: usize,
    pub learning_threshold: usize,
    pub connected_permanence: f64,
    pub initial_permanence: f64,
    pub permanence_increment: f64,
    pub permanence_decrement: f64,
    pub max_synapses_per_segment: usize,
    pub new_synapse_count: usize,
    pub max_segments_per_cell: usize,
    pub pool_size: usize,
    pub pool_decay: f64,
    pub replacement_gain: f64,
    pub persistence_cap: f64,
}

impl Default for SdrConfig {
    fn default() -> Self {
        let tm = TmConfig::default();
        let pool = PoolerConfig::default();
        let enc = |field: &str, min, max, n, w| FieldEncoder {
            field: field.into(),
            min,
            max,
            n,
            w,
        };
        SdrConfig {
            stride: 2,
            encoders: vec![
                enc("x", -30.0, 30.0, 682, 13),
                enc("y", -35.0, 35.0, 682, 13),
                enc("z", 0.0, 65.0, 684, 14),
            ],
            cells_per_column: tm.cells_per_column,
            activation_threshold: tm.activation_threshold,
            learning_threshold: tm.learning_threshold,
            connected_permanence: tm.connected_permanence,
            initial_permanence: tm.initial_permanence,
            permanence_increment: tm.permanence_increment,
            permanence_decrement: tm.permanence_decrement,
            max_synapses_per_segment: tm.max_synapses_per_segment,
            new_synapse_count: tm.new_synapse_count,
            max_segments_per_cell: tm.max_segments_per_cell,
            pool_size: pool.pool_size,
            pool_decay: pool.decay,
            replacement_gain: pool.replacement_gain,
            persistence_cap: pool.persistence_cap,
        }
    }
}

impl SdrConfig {
    pub fn width(&self) -> usize {
        self.encoders.iter().map(|e| e.n).sum()
    }

    pub fn encoder_configs(&self) -> Vec<(usize, ScalarEncoderConfig)> {
        self.encoders
            .iter()
            .map(|e| {
                let axis = match e.field.as_str() {
                    "x" => 0,
                    "y" => 1,
                    _ => 2,
                };
                (
                    axis,
                    ScalarEncoderConfig {
                        min: e.min,
                        max: e.max,
                        n: e.n,
                        w: e.w,
                    },
                )
            })
            .collect()
    }

    pub fn tm_config(&self, seed: u64) -> TmConfig {
        TmConfig {
            columns: self.width(),
            cells_per_column: self.cells_per_column,
            activation_threshold: self.activation_threshold,
            learning_threshold: self.learning_threshold,
            connected_permanence: self.connected_permanence,
            initial_permanence: self.initial_permanence,
            permanence_increment: self.permanence_increment,
            permanence_decrement: self.permanence_decrement,
            max_synapses_per_segment: self.max_synapses_per_segment,
            new_synapse_count: self.new_synapse_count,
            max_segments_per_cell: self.max_segments_per_cell,
            seed,
        }
    }

    pub fn pooler_config(&self) -> PoolerConfig {
        PoolerConfig {
            pool_size: self.pool_size,
            decay: self.pool_decay,
            replacement_gain: self.replacement_gain,
            persistence_cap: self.persistence_cap,
        }
    }
}

/// Optional CSV inputs (`step,t,value`) that replace generated series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<PathBuf>,
    /// Second series for `causality`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_y: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("config error at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn params(&self) -> SystemParams {
        SystemParams {
            sigma: self.system.sigma,
            rho: self.system.rho,
            beta: self.system.beta,
        }
    }

    pub fn schedule(&self) -> Result<ParameterSchedule, ConfigError> {
        let mut segments = vec![(0, self.params())];
        for sw in &self.schedule {
            let last = segments.last().expect("non-empty").1;
            segments.push((
                sw.step,
                SystemParams {
                    sigma: sw.sigma.unwrap_or(last.sigma),
                    rho: sw.rho.unwrap_or(last.rho),
                    beta: sw.beta.unwrap_or(last.beta),
                },
            ));
        }
        ParameterSchedule::new(segments).map_err(|e| ConfigError(format!("config error at `schedule`: {e}")))
    }

    pub fn x0(&self) -> State3 {
        let [x, y, z] = self.system.x0;
        State3::new(x, y, z)
    }

    pub fn method(&self) -> Method {
        match self.system.method {
            MethodName::Rk4 => Method::Rk4,
            MethodName::Euler => Method::Euler,
        }
    }

    pub fn observation(&self, seed: u64) -> ObservationConfig {
        ObservationConfig {
            weights: self.observation.weights,
            noise_std: self.observation.noise_std,
            seed,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fail = |path: &str, msg: String| Err(ConfigError(format!("config error at `{path}`: {msg}")));
        if !(self.system.dt.is_finite() && self.system.dt > 0.0) {
            return fail("system.dt", format!("must be positive, got {}", self.system.dt));
        }
        if self.system.x0.iter().any(|v| !v.is_finite()) {
            return fail("system.x0", "must be finite".into());
        }
        self.schedule()?;
        if let Err(e) = self.observation(0).validate() {
            return fail("observation", e.to_string());
        }
        if self.embedding.tau == Some(0) || self.embedding.k == Some(0) {
            return fail("embedding", "tau and k must be >= 1".into());
        }
        if self.embedding.max_lag == 0 || self.embedding.k_max == 0 {
            return fail("embedding", "max_lag and k_max must be >= 1".into());
        }
        let f = &self.forecast;
        if f.kn == 0 || f.horizon == 0 {
            return fail("forecast", "kn and horizon must be >= 1".into());
        }
        if !(f.gap_factor.is_finite() && f.gap_factor > 0.0) {
            return fail("forecast.gap_factor", format!("must be positive, got {}", f.gap_factor));
        }
        if !(f.train_fraction > 0.0 && f.train_fraction < 1.0) {
            return fail(
                "forecast.train_fraction",
                format!("must lie in (0, 1), got {}", f.train_fraction),
            );
        }
        let r = &self.regimes;
        if r.kn == 0 || r.horizon == 0 {
            return fail("regimes", "kn and horizon must be >= 1".into());
        }
        if !(r.decay > 0.0 && r.decay <= 1.0) {
            return fail("regimes.decay", format!("must lie in (0, 1], got {}", r.decay));
        }
        if !(r.perturbation.is_finite() && r.perturbation >= 0.0) {
            return fail("regimes.perturbation", "must be finite and non-negative".into());
        }
        let c = &self.causality;
        if c.tau == 0 || c.k == 0 || c.l_k == 0 {
            return fail("causality", "tau, k and l_k must be >= 1".into());
        }
        if c.library_sizes.is_empty() || c.library_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail(
                "causality.library_sizes",
                "must be non-empty and strictly increasing".into(),
            );
        }
        let s = &self.sdr;
        if s.stride == 0 {
            return fail("sdr.stride", "must be >= 1".into());
        }
        if s.encoders.is_empty() {
            return fail("sdr.encoders", "need at least one encoder".into());
        }
        for (i, e) in s.encoders.iter().enumerate() {
            if !matches!(e.field.as_str(), "x" | "y" | "z") {
                return fail(
                    &format!("sdr.encoders[{i}].field"),
                    format!("expected x, y or z, got {:?}", e.field),
                );
            }
            let enc = ScalarEncoderConfig {
                min: e.min,
                max: e.max,
                n: e.n,
                w: e.w,
            };
            if let Err(err) = enc.validate() {
                return fail(&format!("sdr.encoders[{i}]"), err.to_string());
            }
        }
        if let Err(e) = s.tm_config(0).validate() {
            return fail("sdr", e.to_string());
        }
        if let Err(e) = dynhtm::sdr::TemporalPooler::new(s.width(), s.pooler_config()) {
            return fail("sdr", e.to_string());
        }
        Ok(())
    }
}
