//! Ground-truth dynamical systems: the Lorenz flow, fixed-step integration
//! under a piecewise-constant parameter schedule, and scalar observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::TimeSeries;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl SystemParams {
    /// σ = 10, ρ = 28, β = 8/3.
    pub const CLASSICAL: SystemParams = SystemParams {
        sigma: 10.0,
        rho: 28.0,
        beta: 8.0 / 3.0,
    };

    pub fn with_rho(self, rho: f64) -> Self {
        SystemParams { rho, ..self }
    }

    fn is_finite(&self) -> bool {
        self.sigma.is_finite() && self.rho.is_finite() && self.beta.is_finite()
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::CLASSICAL
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        State3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn axpy(self, a: f64, d: State3) -> State3 {
        State3::new(self.x + a * d.x, self.y + a * d.y, self.z + a * d.z)
    }

    pub fn max_abs_diff(&self, other: &State3) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }
}

/// Piecewise-constant control parameters. A segment applies from its start
/// step until the next segment's start step.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSchedule {
    segments: Vec<(usize, SystemParams)>,
}

impl ParameterSchedule {
    pub fn constant(params: SystemParams) -> Self {
        ParameterSchedule {
            segments: vec![(0, params)],
        }
    }

    pub fn new(segments: Vec<(usize, SystemParams)>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::InvalidParameter("schedule needs at least one segment".into())),
            Some((s, _)) if *s != 0 => {
                return Err(Error::InvalidParameter(
                    "first schedule segment must start at step 0".into(),
                ))
            }
            _ => {}
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter(
                "schedule start steps must be strictly increasing".into(),
            ));
        }
        if let Some((s, _)) = segments.iter().find(|(_, p)| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite parameters in segment starting at step {s}"
            )));
        }
        Ok(ParameterSchedule { segments })
    }

    /// Convenience for a single switch of ρ at `step`.
    pub fn rho_switch(base: SystemParams, step: usize, rho_after: f64) -> Result<Self> {
        Self::new(vec![(0, base), (step, base.with_rho(rho_after))])
    }

    pub fn segments(&self) -> &[(usize, SystemParams)] {
        &self.segments
    }

    /// Index of the segment active at `step`.
    pub fn segment_index(&self, step: usize) -> usize {
        self.segments.partition_point(|(s, _)| *s <= step) - 1
    }

    pub fn params_at(&self, step: usize) -> SystemParams {
        self.segments[self.segment_index(step)].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<State3>,
    pub schedule: ParameterSchedule,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Regime (schedule segment index) active at each step.
    pub fn regime_labels(&self) -> Vec<usize> {
        (0..self.states.len()).map(|s| self.schedule.segment_index(s)).collect()
    }
}

/// Right-hand side of the Lorenz equations.
pub fn lorenz_deriv(s: State3, p: SystemParams) -> Result<State3> {
    if !s.is_finite() || !p.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite Lorenz input: state {s:?}, params {p:?}"
        )));
    }
    Ok(deriv(s, p))
}

#[inline]
fn deriv(s: State3, p: SystemParams) -> State3 {
    State3 {
        x: p.sigma * (s.y - s.x),
        y: s.x * (p.rho - s.z) - s.y,
        z: s.x * s.y - p.beta * s.z,
    }
}

fn step_rk4(s: State3, p: SystemParams, dt: f64) -> State3 {
    let k1 = deriv(s, p);
    let k2 = deriv(s.axpy(0.5 * dt, k1), p);
    let k3 = deriv(s.axpy(0.5 * dt, k2), p);
    let k4 = deriv(s.axpy(dt, k3), p);
    State3 {
        x: s.x + dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: s.y + dt / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        z: s.z + dt / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z),
    }
}

/// Fixed-step integration. The transition from step `s` to `s + 1` uses the
/// parameters of the segment active at `s`.
pub fn integrate(
    schedule: &ParameterSchedule,
    x0: State3,
    dt: f64,
    n_steps: usize,
    method: Method,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !x0.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite initial state {x0:?}")));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0);
    let mut cur = x0;
    for s in 0..n_steps {
        let p = schedule.params_at(s);
        cur = match method {
            Method::Rk4 => step_rk4(cur, p, dt),
            Method::Euler => cur.axpy(dt, deriv(cur, p)),
        };
        if !cur.is_finite() {
            return Err(Error::Divergence { step: s + 1 });
        }
        states.push(cur);
    }
    Ok(Trajectory {
        dt,
        states,
        schedule: schedule.clone(),
    })
}

/// Linear scalar observable plus additive Gaussian measurement noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationConfig {
    pub weights: [f64; 3],
    pub noise_std: f64,
    pub seed: u64,
}

impl ObservationConfig {
    /// Noise-free observation of the x coordinate.
    pub fn x_only() -> Self {
        ObservationConfig {
            weights: [1.0, 0.0, 0.0],
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().all(|w| *w == 0.0) || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "observation weights must be finite and not all zero".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

pub fn observe(traj: &Trajectory, cfg: &ObservationConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    if traj.is_empty() {
        return Err(Error::InsufficientData {
            what: "observation",
            needed: 1,
            got: 0,
        });
    }
    let [wx, wy, wz] = cfg.weights;
    let mut values: Vec<f64> = traj.states.iter().map(|s| wx * s.x + wy * s.y + wz * s.z).collect();
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }
    TimeSeries::new(traj.dt, values)
}

/// Two logistic maps with linear cross terms:
/// `x' = x(rx − rx·x − beta_xy·y)`, `y' = y(ry − ry·y − beta_yx·x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticPair {
    pub rx: f64,
    pub ry: f64,
    /// Influence of y on x.
    pub beta_xy: f64,
    /// Influence of x on y.
    pub beta_yx: f64,
}

impl LogisticPair {
    /// x drives y; y has no effect on x.
    pub const X_DRIVES_Y: LogisticPair = LogisticPair {
        rx: 3.8,
        ry: 3.5,
        beta_xy: 0.0,
        beta_yx: 0.1,
    };
}

/// Iterates the pair from a seeded start in `[0.2, 0.8)²`, discarding
/// `burn_in` iterates, and returns `n` samples of each map.
pub fn coupled_logistic(pair: LogisticPair, n: usize, burn_in: usize, seed: u64) -> Result<(TimeSeries, TimeSeries)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y): (f64, f64) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for t in 0..n + burn_in {
        let nx = x * (pair.rx - pair.rx * x - pair.beta_xy * y);
        let ny = y * (pair.ry - pair.ry * y - pair.beta_yx * x);
        x = nx;
        y = ny;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
        if t >= burn_in {
            xs.push(x);
            ys.push(y);
        }
    }
    Ok((TimeSeries::new(1.0, xs)?, TimeSeries::new(1.0, ys)?))
}
